"""Simulation and DSP toolkit for comb-based, non-sliced optical arbitrary
waveform measurement receivers."""

from .types import CalibrationRecord, ChannelRecords, DriftParams, TransferMatrixSet
from .signalkit import SampledWaveform, Spectrum, RandomSignalSpec
from .frontend import ADCConfig, CombLO, FrontEndConfig
from .estimators import FrontEndSimulator, MultiShotCalibrator, OAWMReconstructor
from .budget import BudgetParams, NoiseBudget, combine
from .scenario import Scenario, ScenarioError, load_scenario

__version__ = "0.1.0"

__all__ = ["ADCConfig", "BudgetParams", "CalibrationRecord", "ChannelRecords", "CombLO",
           "DriftParams", "FrontEndConfig", "FrontEndSimulator", "MultiShotCalibrator",
           "NoiseBudget", "OAWMReconstructor", "RandomSignalSpec", "SampledWaveform", "Scenario",
           "ScenarioError", "Spectrum", "TransferMatrixSet", "combine", "load_scenario",
           "__version__"]
