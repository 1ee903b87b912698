from decouple import config

# Enumeration limits (desk-scale oracles)
ENUMERATION_CAP = config("SUBMAX_ENUMERATION_CAP", default=20, cast=int)
SENSITIVITY_CAP = config("SUBMAX_SENSITIVITY_CAP", default=15, cast=int)
BRUTE_FORCE_CAP = config("SUBMAX_BRUTE_FORCE_CAP", default=15, cast=int)
KSUB_STATE_CAP = config("SUBMAX_KSUB_STATE_CAP", default=65536, cast=int)
MEET_JOIN_STATE_CAP = config("SUBMAX_MEET_JOIN_STATE_CAP", default=4096, cast=int)
COVERING_BUDGET = config("SUBMAX_COVERING_BUDGET", default=2_000_000, cast=int)

# Numerics
POLYTOPE_TOL = config("SUBMAX_POLYTOPE_TOL", default=1e-9, cast=float)
OVERFLOW_GUARD = config("SUBMAX_OVERFLOW_GUARD", default=700.0, cast=float)
MC_SAMPLE_FACTOR = config("SUBMAX_MC_SAMPLE_FACTOR", default=10.0, cast=float)
BATCH_ROWS = config("SUBMAX_BATCH_ROWS", default=4096, cast=int)

# Runtime
WORKERS = config("SUBMAX_WORKERS", default=1, cast=int)
LOG_LEVEL = config("SUBMAX_LOG_LEVEL", default="INFO")
PORT = config("PORT", default=8084, cast=int)
