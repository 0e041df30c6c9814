import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qif.experiments import (ConfigError, ReadoutModel, ResultTable, SweepConfig, emit_plot,
                             export_waveform, fit_stretched_exponential, read_waveform, run_sweep)
from qif.filters import FilterSpec, design
from qif.invariant import aux_from_impulse, fields_from_aux


def cfg(**kw):
    d = {"experiment": "freq_response", "seed": 1,
         "axes": {"frequency_mhz": [0.5, 1.35, 2.0]}}
    d.update(kw)
    return SweepConfig.from_dict(d)


def test_seed_required():
    with pytest.raises(ConfigError) as e:
        SweepConfig.from_dict({"experiment": "freq_response"})
    assert e.value.field == "seed"
    assert SweepConfig.from_dict({"experiment": "freq_response"}, seed=3).seed == 3


@pytest.mark.parametrize("patch,field", [
    ({"experiment": "nope"}, "experiment"),
    ({"axes": {"frequency_mhz": []}}, "axes.frequency_mhz"),
    ({"axes": {"frequency_mhz": {"start": 2, "stop": 1, "step": 0.1}}}, "axes.frequency_mhz"),
    ({"axes": {"phase_rad": [0.1]}}, "axes.phase_rad"),
    ({"peak": 1.0}, "peak"),
    ({"aux_mode": "fast"}, "aux_mode"),
    ({"trials": 0}, "trials"),
    ({"signal": {"waveform": "square"}}, "signal.waveform"),
    ({"noise": {"kind": "pink"}}, "noise"),
    ({"bogus": 1}, "bogus"),
    ({"readout": {"enabled": True, "bright_level": 0, "dark_level": 1}}, "readout"),
    ({"step": {"dt_us": -1}}, "step"),
])
def test_invalid_configs_name_field(patch, field):
    with pytest.raises(ConfigError) as e:
        cfg(**patch)
    assert e.value.field == field


def test_range_axis():
    c = cfg(axes={"frequency_mhz": {"start": 0, "stop": 4, "step": 0.01}})
    assert c.axes["frequency_mhz"].size == 401
    assert c.axes["frequency_mhz"][135] == 1.35


def test_config_hash_stable_and_sensitive():
    assert cfg().config_hash() == cfg().config_hash()
    assert cfg().config_hash() != cfg(seed=2).config_hash()


def test_readout_model():
    r = ReadoutModel(1.0, -1.0, True)
    np.testing.assert_allclose(r.contrast([0.3, -0.5, 1.0]), [0.3, -0.5, 1.0])
    r2 = ReadoutModel(1.3, 1.0, True)
    sz = np.array([1.0, 0.0, -1.0])
    s1 = 1.0 + 0.3 * (1 + sz) / 2
    s2 = 1.0 + 0.3 * (1 - sz) / 2
    np.testing.assert_allclose(r2.contrast(sz), (s1 - s2) / ((s1 + s2) / 2))
    assert ReadoutModel().contrast(0.2) == 0.2


def test_freq_response_columns_and_prediction():
    t = run_sweep(cfg())
    assert t.names[:2] == ["frequency_mhz", "sz"]
    np.testing.assert_allclose(t["deficit"], t["predicted_deficit"], rtol=2e-3, atol=1e-9)
    assert t.metadata["seed"] == 1 and len(t.metadata["config_hash"]) == 16


def test_noise_ensemble_has_sem():
    t = run_sweep(cfg(noise={"kind": "white", "rms_amplitude": 0.3}, trials=8))
    assert np.all(t["sz_sem"] > 0)


def test_thread_count_does_not_change_output():
    c = cfg(noise={"kind": "one_over_f", "rms_amplitude": 0.4}, trials=10, chunk=7)
    assert run_sweep(c, 1).to_csv() == run_sweep(c, 3).to_csv()


def test_csv_roundtrip():
    t = run_sweep(cfg())
    back = ResultTable.from_csv(t.to_csv())
    np.testing.assert_array_equal(back["sz"], t["sz"])
    assert back.metadata == t.metadata
    assert ResultTable.from_json(t.to_json()).metadata == t.metadata


def test_cpmg_map_prediction():
    c = SweepConfig.from_dict({"experiment": "cpmg_map", "seed": 0, "signal": {"amplitude": 0.1},
                               "axes": {"n_pulses": [2, 4], "frequency_mhz": [0.25, 0.5, 1.0]}})
    t = run_sweep(c)
    np.testing.assert_allclose(t["deficit"], t["predicted_deficit"], atol=1e-10)


def test_amplitude_robustness_noise_free():
    c = SweepConfig.from_dict({"experiment": "amplitude_robustness", "seed": 0,
                               "axes": {"scale": [0.5, 0.8, 1.5]}})
    t = run_sweep(c)
    assert np.all(1 - t["qif_sz"] < 1e-10)
    assert t["cpmg_sz"][1] < 0.9


def test_stretched_exponential_fit():
    t = np.linspace(1, 40, 12)
    T, p = fit_stretched_exponential(t, np.exp(-(t / 17.0) ** 1.7))
    assert T == pytest.approx(17.0, rel=1e-4) and p == pytest.approx(1.7, rel=1e-4)


def test_duration_decay_small():
    c = SweepConfig.from_dict({
        "experiment": "duration_decay", "seed": 3, "trials": 12,
        "noise": {"kind": "one_over_f", "rms_amplitude": 0.5},
        "axes": {"duration_us": [4, 8]}, "step": {"dt_us": 0.004},
        "cpmg": {"n_pulses": [8]}, "decay": {"t1_us": 100.0}})
    t = run_sweep(c)
    assert {"qif_sz", "cpmg8_sz", "free_sz", "t1_envelope"} <= set(t.names)
    assert "decay_time_us_qif" in t.metadata


def test_export_waveform_counts():
    h = design(FilterSpec())
    f = fields_from_aux(aux_from_impulse(h, dt=1e-3))
    head, vals = read_waveform(export_waveform(f, 4))
    assert head["n_samples"] == "1000" and vals.size == 1000
    # midpoint resampling of eps
    t = (np.arange(1000) + 0.5) * 0.004
    np.testing.assert_allclose(vals, np.interp(t, f.grid, f.epsilon), atol=2e-3 * np.abs(vals).max())
    head, vals = read_waveform(export_waveform(f, 4, max_samples=300))
    assert head["dt_ns"] == "16" and vals.size == 250 and head["decimated_from_dt_ns"] == "4"
    with pytest.raises(ConfigError):
        export_waveform(f, 4, max_samples=100)
    with pytest.raises(ConfigError):
        export_waveform(f, 5)


@settings(max_examples=10, deadline=None)
@given(tf=st.sampled_from([1.024, 2.048, 4.0, 8.0]), dt=st.sampled_from([4, 8, 16, 32]))
def test_waveform_sample_count_property(tf, dt):
    spec = FilterSpec.make(1.5, duration=tf)
    f = fields_from_aux(aux_from_impulse(design(spec), dt=1e-3))
    if abs(tf * 1000 / dt - round(tf * 1000 / dt)) > 1e-9:
        with pytest.raises(ConfigError):
            export_waveform(f, dt)
    else:
        head, vals = read_waveform(export_waveform(f, dt))
        assert vals.size == round(tf * 1000 / dt) == int(head["n_samples"])


def test_plots_are_deterministic(tmp_path):
    t = run_sweep(cfg())
    a = emit_plot(t, "line", tmp_path / "a.svg")
    assert a == emit_plot(t, "line") and a.startswith("<?xml")
    c = SweepConfig.from_dict({"experiment": "filter_center_map", "seed": 0,
                               "axes": {"center_mhz": [1, 2], "frequency_mhz": [1, 1.5, 2]}})
    assert "<svg" in emit_plot(run_sweep(c), "heatmap")
    with pytest.raises(ValueError):
        emit_plot(ResultTable({"x": []}), "line")
    with pytest.raises(ValueError):
        emit_plot(t, "heatmap")
