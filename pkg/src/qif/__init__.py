"""Invariant-based quantum filters for a driven two-level sensor.

Design a band-pass kernel, turn it into control fields whose closed-loop
evolution returns the qubit to its start unless a signal passes the filter,
and compare against pulsed decoupling under noise.
"""
__version__ = "0.1.0"

from .filters import (Center, FilterSpec, ImpulseResponse, TransferFunction, design,
                      design_from_spectrum, design_lowpass, transfer_function)
from .invariant import (AuxiliaryFields, ControlFields, SingularFieldError, aux_from_impulse,
                        fields_from_aux, lr_phase)
from .response import SignalSpec, deficit_spectrum, magnus_predict, second_order_deficit
from .dynamics import QubitState, StepConfig, propagate, simulate_batch, simulate_protocol
from .noise import NoiseModel, synthesize
from .cpmg import build_cpmg, cpmg_filter_response, simulate_sequence
from .experiments import ConfigError, NumericalError, ReadoutModel, ResultTable, SweepConfig, run_sweep
from .estimator import CPMGFilter, InvariantFilter

__all__ = [
    "Center", "FilterSpec", "ImpulseResponse", "TransferFunction", "design",
    "design_from_spectrum", "design_lowpass", "transfer_function",
    "AuxiliaryFields", "ControlFields", "SingularFieldError", "aux_from_impulse",
    "fields_from_aux", "lr_phase", "SignalSpec", "deficit_spectrum", "magnus_predict",
    "second_order_deficit", "QubitState", "StepConfig", "propagate", "simulate_batch",
    "simulate_protocol", "NoiseModel", "synthesize", "build_cpmg", "cpmg_filter_response",
    "simulate_sequence", "ConfigError", "NumericalError", "ReadoutModel", "ResultTable",
    "SweepConfig", "run_sweep", "CPMGFilter", "InvariantFilter",
]
