"""Physical constants (CODATA 2018, SI)."""

HBAR = 1.054571817e-34  # J s
KB = 1.380649e-23  # J / K
AMU = 1.66053906660e-27  # kg

# 40Ca atomic mass minus one electron
CA40_ION_MASS_AMU = 39.962590863 - 5.48579909065e-4
