import json

import pytest

from shared.config import CONFIG_DIR, SYNTH_BAND_HZ
from tools.noise_model import assemble_budget, frequency_grid
from tools.params import load_config
from tools.spectra import model_spectrum, synthesize, welch_asd

TABLETOP_CONFIG = CONFIG_DIR / "tabletop.json"
LINE_F0 = 50000.0
LINE_AMP = 2e-14
MEASURED_R_EFF = 0.36


@pytest.fixture(scope="session")
def tabletop_config():
    return load_config(TABLETOP_CONFIG)


@pytest.fixture
def tabletop_data():
    """Raw JSON of the shipped config, safe to mutate."""
    return json.loads(TABLETOP_CONFIG.read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def tabletop_grid(tabletop_config):
    g = tabletop_config.grid
    return frequency_grid(g.fmin, g.fmax, g.points, g.scale)


@pytest.fixture(scope="session")
def tabletop_budget(tabletop_config, tabletop_grid):
    return assemble_budget(tabletop_config, None, None, tabletop_grid)


@pytest.fixture(scope="session")
def model_pair(tabletop_config, tabletop_grid):
    """Noiseless unsqueezed and chain-squeezed spectra of the shipped config."""
    off = assemble_budget(tabletop_config, None, None, tabletop_grid)
    on = assemble_budget(tabletop_config, tabletop_config.squeezer, None, tabletop_grid)
    return model_spectrum(off), model_spectrum(on)


@pytest.fixture(scope="session")
def synthesized_pair(tabletop_config, tabletop_grid):
    """4 s squeezing-off/on records with the 50 kHz line, squeezed at the measured r_eff."""
    off = assemble_budget(tabletop_config, None, None, tabletop_grid)
    on = assemble_budget(tabletop_config, tabletop_config.squeezer, None, tabletop_grid, r_eff=MEASURED_R_EFF)
    line = (LINE_F0, LINE_AMP)
    spec_off = welch_asd(synthesize(off, 256000.0, 4.0, seed=11, line=line, band=SYNTH_BAND_HZ))
    spec_on = welch_asd(synthesize(on, 256000.0, 4.0, seed=12, line=line, band=SYNTH_BAND_HZ))
    return spec_off, spec_on, off, on
