from app.utils.allocation import AllocationTracker
from app.utils.dihedral import DIHEDRAL_8, DIHEDRAL_16, Dihedral
from app.utils.stop_watch import Stopwatch

__all__ = ["AllocationTracker", "DIHEDRAL_8", "DIHEDRAL_16", "Dihedral", "Stopwatch"]
