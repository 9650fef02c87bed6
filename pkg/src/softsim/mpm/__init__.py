"""MLS-MPM elasto-plastic solver."""
from .constitutive import (PRESETS, PARAMETER_RANGES, Material, check_material_ranges, deviatoric_norm,
                           kirchhoff_stress, von_mises_return_map)
from .solver import (CFLViolation, LostParticleError, MpmGrid, Particles, SimulationDiverged, SoftState,
                     bspline_weights, clear_grid, find_lost, freeze_lost, g2p_advect, grid_update,
                     kinetic_energy, p2g, seed_box, set_threads, soft_substep, state_digest)

__all__ = [
    "PRESETS", "PARAMETER_RANGES", "Material", "check_material_ranges", "deviatoric_norm", "kirchhoff_stress",
    "von_mises_return_map", "CFLViolation", "LostParticleError", "MpmGrid", "Particles", "SimulationDiverged",
    "SoftState", "bspline_weights", "clear_grid", "find_lost", "freeze_lost", "g2p_advect", "grid_update",
    "kinetic_energy", "p2g", "seed_box", "set_threads", "soft_substep", "state_digest",
]
