from .params import SsmParams, init_A_log
from .scan import BACKENDS, DEFAULT_BACKEND, selective_scan
from .zoh import scan_recurrence, zoh_discretize
