"""calibrix: material parameter calibration from full-field mechanical data.

Plane-stress Q4 finite elements, reduced / virtual-fields / all-at-once
identification of linear elasticity, a von Mises viscoplasticity point model
with a two-step calibration pipeline, and frequentist plus Bayesian
uncertainty quantification.
"""

__version__ = "0.1.0"
