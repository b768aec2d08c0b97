"""
設定（環境変数と実験設定ファイル）のテスト
"""

import pytest

from config import Config, RunConfig


def test_default_config_is_valid():
    Config.validate_config()
    assert Config.default_tolerance(2) == Config.MINRES_TOL_2D
    assert Config.default_tolerance(3) == Config.MINRES_TOL_3D


def test_resolved_level_defaults():
    cfg = RunConfig()
    assert cfg.level == 0
    assert cfg.resolved_level == 4
    assert RunConfig(experiment='param-sweep').resolved_level == Config.SWEEP_LEVEL_2D
    assert RunConfig(experiment='param-sweep', dim=3).resolved_level == Config.SWEEP_LEVEL_3D
    assert RunConfig(experiment='footing', dim=3).resolved_level == Config.FOOTING_LEVEL_3D
    assert RunConfig(experiment='spectrum', level=5).resolved_level == 5


def test_from_file(tmp_path):
    path = tmp_path / 'run.env'
    path.write_text('EXPERIMENT=Footing\nDIM=3\nTAUS=1, 0.5\nLAM=100\nWRITE_VTK=true\nTOLERANCE=1e-7\n')
    cfg = RunConfig.from_file(path).validate()
    assert cfg.experiment == 'footing'
    assert cfg.dim == 3
    assert cfg.taus == (1.0, 0.5)
    assert cfg.params == {'lam': 100.0}
    assert cfg.write_vtk is True
    assert cfg.effective_tolerance == 1e-7


def test_overrides_keep_previous_values():
    cfg = RunConfig().with_overrides(mu='2', variant='EDG', level=None)
    cfg = cfg.with_overrides(kappa=1e-4)
    assert cfg.params == {'mu': 2.0, 'kappa': 1e-4}
    assert cfg.variant == 'edg'
    assert cfg.level == 0


def test_effective_tolerance_depends_on_dimension():
    assert RunConfig(dim=3).effective_tolerance == Config.MINRES_TOL_3D
    assert RunConfig(dim=2, tolerance=1e-5).effective_tolerance == 1e-5


@pytest.mark.parametrize('overrides', [
    dict(experiment='table'),
    dict(dim='4'),
    dict(variant='cg'),
    dict(preconditioner='jacobi'),
    dict(tolerance='2.0'),
    dict(level='-1'),
    dict(degree='1'),
    dict(taus='0.1, 0'),
    dict(steps='-1'),
    dict(workers='0'),
])
def test_invalid_values_are_rejected(overrides):
    with pytest.raises(ValueError):
        RunConfig().with_overrides(**overrides).validate()


def test_unknown_key_is_rejected():
    with pytest.raises(ValueError):
        RunConfig().with_overrides(mesh_size='3')


if __name__ == "__main__":
    test_default_config_is_valid()
    test_resolved_level_defaults()
    test_overrides_keep_previous_values()
    print('設定のテスト成功')
