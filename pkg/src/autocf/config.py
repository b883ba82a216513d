import os
from dotenv import load_dotenv

load_dotenv()

# Output configuration
OUT_DIR = os.getenv('AUTOCF_OUT_DIR', 'out')
DATABASE_URL = os.getenv('AUTOCF_DATABASE_URL')  # None -> sqlite file inside the output dir

# Execution configuration
THREADS = int(os.getenv('AUTOCF_THREADS', '1'))
PRECISION = os.getenv('AUTOCF_PRECISION', 'float64')
DEBUG_CHECKS = os.getenv('AUTOCF_DEBUG', '0').lower() in ('1', 'true', 'yes')

# Optional desk-scale dataset for the long-running trainability test
DESK_DATASET = os.getenv('AUTOCF_DESK_DATASET')
