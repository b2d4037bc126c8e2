"""Grid-based comparison maps: batch CLiFF, online CLiFF and STeF."""
from .cliff import CliffCell, CliffMap, GridMod, build_cliff, build_hourly_cliff, fit_cell
from .em import em_fit_swgmm, em_run
from .grid import Lattice
from .meanshift import mean_shift_modes
from .online import OnlineCliffMap, SemState, build_online_cliff, sem_init, sem_update
from .stef import StefCell, StefMap, build_stef, fremen_fit, stef_query

__all__ = [
    "CliffCell", "CliffMap", "GridMod", "Lattice", "OnlineCliffMap", "SemState", "StefCell", "StefMap",
    "build_cliff", "build_hourly_cliff", "build_online_cliff", "build_stef", "em_fit_swgmm", "em_run",
    "fit_cell", "fremen_fit", "mean_shift_modes", "sem_init", "sem_update", "stef_query",
]
