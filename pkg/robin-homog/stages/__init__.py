from .cell_stage import CellStage
from .simulation_stage import SimulationStage
from .boundary_stage import BoundaryStage
from .bsde_stage import BsdeStage
from .reference_stage import ReferenceStage

__all__ = ['CellStage', 'SimulationStage', 'BoundaryStage', 'BsdeStage', 'ReferenceStage']
