"""Token-domain multiple access simulator (Python front end to the C++ core)."""

import json as _json

from . import _core
from ._core import (
    RESULTS_HEADER,
    DetectorConfig,
    InvalidArgument,
    SourceModel,
    StageError,
    amp_detect,
    denoiser_moments,
    derive_seed,
    fit_markov,
    gen_codebook,
    gen_markov_sources,
    latency_orth,
    latency_todma,
    nmse_db,
    snr_db_to_noise_variance,
    tder,
    ter,
    uniform_model,
)

__version__ = _core.__version__


def preset(name):
    """Experiment config of a named preset (desk, full, text) as a dict."""
    return _json.loads(_core.preset_json(name))


def normalize_config(config):
    """Strictly parse a config dict and return it with every default filled in."""
    return _json.loads(_core.normalize_config_json(_json.dumps(config)))


def config_hash(config):
    return _core.config_hash(_json.dumps(config))


def run_trial(config, trial=0):
    """One end-to-end trial; returns the metrics record as a dict."""
    return _core.run_trial(_json.dumps(config), trial)


def csv_row(config, trial=0):
    return _core.csv_row(_json.dumps(config), trial)
