"""Risk-driven assurance loop for a collaborative robot cell."""

from riskloop.analysis import RiskReport, analyze, propagate
from riskloop.dsl import parse_model, serialize_model, validate_source
from riskloop.falsify import FalsificationResult, build_search_space, conditional_violation_prob, falsify
from riskloop.infill import RiskEvidence, apply_feedback, derive_evidence, fit_density, hdr, likelihood_from_hdr
from riskloop.model import Diagnostic, ModelError, RiskModel, validate
from riskloop.scenario import Scenario, bundled_scenario, load_scenario
from riskloop.sim import EnvConfig, SimTrace, run_episode, simulate_batch

__version__ = "0.1.0"

__all__ = [
    "Diagnostic", "EnvConfig", "FalsificationResult", "ModelError", "RiskEvidence", "RiskModel", "RiskReport",
    "Scenario", "SimTrace", "analyze", "apply_feedback", "build_search_space", "bundled_scenario",
    "conditional_violation_prob", "derive_evidence", "falsify", "fit_density", "hdr", "likelihood_from_hdr",
    "load_scenario", "parse_model", "propagate", "run_episode", "serialize_model", "simulate_batch", "validate",
    "validate_source",
]
