from .circuit import ResistiveNetwork
from .mapping import (ConductanceTile, XbarConfig, XbarLinear, apply_variation, conductances_to_weights,
                      crossbar_network, dump_mapped, map_model, nonideality, solve_nonideal,
                      weights_to_conductances)

__all__ = [
    "ConductanceTile", "ResistiveNetwork", "XbarConfig", "XbarLinear", "apply_variation",
    "conductances_to_weights", "crossbar_network", "dump_mapped", "map_model", "nonideality",
    "solve_nonideal", "weights_to_conductances",
]
