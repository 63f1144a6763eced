"""Quick end-to-end check of the loadbench Python bindings.

Build first:  pip install --no-build-isolation -e crates/python
"""

import math
import tempfile

import loadbench


def main():
    assert abs(loadbench.nmse([1.0, 2.0], [0.0, 0.0]) - 2.5) < 1e-12
    assert abs(loadbench.nmae([1.0, -3.0], [0.0, 0.0], sigma_y=2.0) - 1.0) < 1e-12
    assert loadbench.pearson([1.0, 1.0], [1.0, 2.0]) is None
    assert sum(loadbench.largest_remainder([5, 3, 2], 7)) == 7
    assert loadbench.split_lengths(35060) == (28048, 3506, 3506)
    assert loadbench.window_count(100, 16, 4) == 81
    assert loadbench.patch_count(512, 16, 8) == 64
    assert loadbench.early_stopping([1.0, 0.5, 0.4, 0.6, 0.7, 0.8], patience=3) == (5, 3, True)

    series = [[math.sin(2 * math.pi * t / 24)] for t in range(192)]
    assert loadbench.detect_periods(series, 1) == [24]

    try:
        loadbench.window_count(3, 4, 4)
    except loadbench.LoadbenchError as e:
        assert str(e).startswith("InsufficientData"), e
    else:
        raise AssertionError("expected LoadbenchError")

    pool = loadbench.Dataset.synth(n_buildings=8, n_steps=96 * 14, n_types=4, seed=3)
    ds = pool.curate(4, seed=1, name="smoke")
    assert len(ds) == 4
    mean, std, obs = ds.heterogeneity()
    assert std > 0 and obs == 4 * 96 * 14

    with tempfile.TemporaryDirectory() as tmp:
        ds.write(tmp + "/ds")
        again = loadbench.Dataset.read(tmp + "/ds")
        assert again.building_ids() == ds.building_ids()

        model = loadbench.Model("lstm", 16, 4, seed=0, preset="toy")
        assert model.num_parameters() > 0
        log = model.fit(ds, lr=1e-3, max_epochs=2, batch_size=256)
        assert 1 <= len(log) <= 2
        nmse, nmae = model.evaluate(ds)
        assert math.isfinite(nmse) and math.isfinite(nmae)
        pred = model.predict(ds)
        assert len(pred[0]) == 4

        model.save(tmp + "/m.lbck")
        back = loadbench.Model.load(tmp + "/m.lbck")
        assert back.evaluate(ds) == (nmse, nmae)

    print("smoke test ok:", sorted(loadbench.ARCHITECTURES), f"nmse={nmse:.4f}")


if __name__ == "__main__":
    main()
