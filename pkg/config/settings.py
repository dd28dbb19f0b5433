import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# =============================================================================
# File Paths and Directories
# =============================================================================
OUTPUT_DIRECTORY = os.getenv("FUSIONNAV_OUTPUT_DIR", "runs")
LOG_DIRECTORY = os.getenv("FUSIONNAV_LOG_DIR", "logs")
LOG_FILE_NAME = "fusionnav.log"

# Run configuration used when `simulate` is called without a path
DEFAULT_CONFIG_PATH = os.getenv("FUSIONNAV_CONFIG", "config/default_run.yaml")

# =============================================================================
# Logging Settings
# =============================================================================
LOG_LEVEL = os.getenv("FUSIONNAV_LOG_LEVEL", "INFO").upper()

# =============================================================================
# Geodesy Settings
# =============================================================================
EARTH_EQUATORIAL_CIRCUMFERENCE_M = 40_075_000.0
EARTH_MERIDIONAL_CIRCUMFERENCE_M = 40_008_000.0
POLAR_LATITUDE_LIMIT_DEG = 89.0  # cos(lat) degenerates past this

# =============================================================================
# Route Settings
# =============================================================================
ROUTE_SWITCH_RADIUS_M = 4.0
ROUTE_NOMINAL_SPACING_M = 12.0
ROUTE_SPACING_WARN_RANGE_M = (6.0, 20.0)
COMMAND_NEAR_THRESHOLD_M = 4.0   # rp1 lateral threshold
COMMAND_FAR_THRESHOLD_M = 8.0    # rp2 lateral threshold

# =============================================================================
# BEV Settings
# =============================================================================
BEV_ROWS = 128
BEV_COLS = 256
BEV_CELL_M = 0.1875
BEV_Z_MIN_M = -0.5
BEV_Z_MAX_M = 3.0
CLASS_COUNT = 20

# =============================================================================
# Camera Settings (defaults; the run configuration may override)
# =============================================================================
CAMERA_WIDTH = 512
CAMERA_HEIGHT = 256
CAMERA_FX = 256.0
CAMERA_FY = 256.0
CAMERA_CX = 256.0
CAMERA_CY = 128.0
CAMERA_HEIGHT_M = 0.9
CAMERA_PITCH_DEG = 0.0
RENDER_MAX_RANGE_M = 50.0

# =============================================================================
# Controller Settings
# =============================================================================
AGENT_MIN_LEVEL = 0.1          # minimum steering/throttle for an agent to drive
DESIRED_SPEED_GAIN = 1.75
WHEEL_RADIUS_M = 0.15
LATERAL_GAINS = (-0.8, 0.0, -0.2)       # kp, ki, kd
LONGITUDINAL_GAINS = (0.8, 0.05, 0.0)   # kp, ki, kd
PID_INTEGRAL_LIMIT = 2.0
DEFAULT_ALPHAS = (1.0, 1.0, 1.0)

# =============================================================================
# Predictor Settings
# =============================================================================
CRUISE_SPEED_MPS = 1.25
WAYPOINT_HORIZONS_S = (1.0, 2.0, 3.0)
RECORD_RATE_HZ = 4
SHIFT_STEP_M = 0.375
SHIFT_LIMIT_M = 3.0
ORACLE_THROTTLE_GAIN = 0.5
WAYPOINT_DELTA_LIMIT_M = 8.0

# =============================================================================
# Localization Settings
# =============================================================================
POSITION_PROCESS_SIGMA_M = 0.03     # odometry drift per tick
BEARING_PROCESS_SIGMA_DEG = 0.1

# =============================================================================
# Vehicle Settings
# =============================================================================
TRACK_WIDTH_M = 0.5
V_MAX_MPS = 2.0
YAW_RATE_MAX_RPS = 1.0
STEP_DT_S = 0.25
ACTUATOR_LAG_S = 0.5
FOOTPRINT_LENGTH_M = 1.0
FOOTPRINT_WIDTH_M = 0.6

# =============================================================================
# Intervention Settings
# =============================================================================
INTERVENTION_HORIZON_S = 2.0
OFF_ROUTE_LIMIT_M = 5.0
REJOIN_DISTANCE_M = 1.0
SUPERVISOR_SPEED_MPS = 0.5
SUPERVISOR_LOOKAHEAD_M = 3.0

# =============================================================================
# Episode Settings
# =============================================================================
EPISODE_TICK_LIMIT = 2000

# =============================================================================
# Validation
# =============================================================================
def validate_settings():
    """Validate that all required settings are properly configured"""
    errors = []

    if LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        errors.append(f"FUSIONNAV_LOG_LEVEL is not a logging level: {LOG_LEVEL}")

    if BEV_ROWS * BEV_CELL_M != 24.0 or BEV_COLS * BEV_CELL_M / 2 != 24.0:
        errors.append("BEV grid must cover 24 m forward, left and right")

    if not (0 < AGENT_MIN_LEVEL < 1):
        errors.append("AGENT_MIN_LEVEL must be between 0 and 1")

    if abs(STEP_DT_S * RECORD_RATE_HZ - 1.0) > 1e-12:
        errors.append("STEP_DT_S must match the record rate")

    low, high = ROUTE_SPACING_WARN_RANGE_M
    if not (0 < low < ROUTE_NOMINAL_SPACING_M < high):
        errors.append("ROUTE_SPACING_WARN_RANGE_M must bracket the nominal spacing")

    if min(WHEEL_RADIUS_M, TRACK_WIDTH_M, V_MAX_MPS, YAW_RATE_MAX_RPS, ROUTE_SWITCH_RADIUS_M) <= 0:
        errors.append("Vehicle and route parameters must be positive")

    if errors:
        raise ValueError("Configuration errors:\n" + "\n".join(f"- {error}" for error in errors))

    return True

# Validate settings on import
if __name__ != "__main__":
    validate_settings()
