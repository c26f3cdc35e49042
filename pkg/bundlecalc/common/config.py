import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# -------------------------------
# Check Defaults
# -------------------------------

CHECK_TOLERANCE = float(os.getenv("CHECK_TOLERANCE") or 1e-8)
CHECK_POINTS = int(os.getenv("CHECK_POINTS") or 5)
CHECK_SEED = int(os.getenv("CHECK_SEED") or 42)

# -------------------------------
# Finite Differences
# -------------------------------

FD_STEP = float(os.getenv("FD_STEP") or 1e-4)
FD_RELATIVE_TOLERANCE = float(os.getenv("FD_RELATIVE_TOLERANCE") or 1e-6)
FD_CURVATURE_TOLERANCE = float(os.getenv("FD_CURVATURE_TOLERANCE") or 1e-5)

# -------------------------------
# Probe Points
# -------------------------------

PROBE_GRID = tuple(
    float(v) for v in (os.getenv("PROBE_GRID") or "-1,0.3,0.7,1").split(",")
)
PROBE_SAMPLE_SIZE = int(os.getenv("PROBE_SAMPLE_SIZE") or 6)
PROBE_SAMPLE_SEED = int(os.getenv("PROBE_SAMPLE_SEED") or 0)
IDENTITY_ASSERT_TOLERANCE = float(os.getenv("IDENTITY_ASSERT_TOLERANCE") or 1e-9)

# -------------------------------
# Size Bounds
# -------------------------------

PRODUCT_RANK_LIMIT = int(os.getenv("PRODUCT_RANK_LIMIT") or 4096)

MAX_GENERATED_DIM = int(os.getenv("MAX_GENERATED_DIM") or 4)
MAX_GENERATED_DEGREE = int(os.getenv("MAX_GENERATED_DEGREE") or 3)

# -------------------------------
# Runner Settings
# -------------------------------

CHECK_WORKERS = int(os.getenv("CHECK_WORKERS") or 4)
LOG_LEVEL = os.getenv("LOG_LEVEL") or "INFO"
LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
