//! Runs the bindings inside an embedded interpreter, so the module is exercised without a
//! separate Python build step.

use distgrid_py::distgrid_module;
use pyo3::prelude::*;

#[test]
fn module_functions_from_python() {
    pyo3::append_to_inittab!(distgrid_module);
    Python::initialize();
    Python::attach(|py| {
        py.run(
            c"
import math, tempfile, pathlib
import distgrid as dg

assert set(dg.scene_presets()) == {'blob4', 'textured', 'empty'}
rgb, t = dg.merge([(0.2, 0.1, 0.0, 0.5), (0.4, 0.4, 0.4, 0.25)])
assert math.isclose(rgb[0], 0.4) and math.isclose(rgb[2], 0.2) and math.isclose(t, 0.125)
assert math.isclose(dg.loss_transmittance(1.0 - math.exp(-1.0)), 1.0)
assert dg.learning_rate(0, 10) > dg.learning_rate(10, 10)
try:
    dg.merge([])
    raise AssertionError('empty merge accepted')
except ValueError:
    pass
except RuntimeError:
    pass

with tempfile.TemporaryDirectory() as tmp:
    data = pathlib.Path(tmp) / 'scene'
    digest = dg.generate_scene('empty', str(data), samples=4)
    assert len(digest) == 64
    try:
        dg.Trainer(str(data), precision=16)
        raise AssertionError('bad precision accepted')
    except ValueError:
        pass
",
            None,
            None,
        )
        .unwrap();
    });
}
