import os
from dataclasses import dataclass, field, fields, replace
from dotenv import load_dotenv, dotenv_values

load_dotenv()


def _env_bool(name, default='false'):
    return os.getenv(name, default).lower() in ('1', 'true', 'yes')


class Config:
    # ログ設定
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO').upper()

    # 離散化設定
    HDG_DEGREE = int(os.getenv('HDG_DEGREE', '2'))

    # MINRES設定（2次元 / 3次元で既定の相対残差許容値が異なる）
    MINRES_TOL_2D = float(os.getenv('MINRES_TOL_2D', '1e-8'))
    MINRES_TOL_3D = float(os.getenv('MINRES_TOL_3D', '1e-6'))

    # 出力設定
    OUTPUT_DIR = os.getenv('OUTPUT_DIR', 'results')

    # 実験設定
    SWEEP_WORKERS = int(os.getenv('SWEEP_WORKERS', '1'))
    SWEEP_LEVEL_2D = int(os.getenv('SWEEP_LEVEL_2D', '69'))  # 2*69^2 = 9522 セル
    SWEEP_LEVEL_3D = int(os.getenv('SWEEP_LEVEL_3D', '8'))   # 6*8^3 = 3072 セル
    FOOTING_LEVEL_2D = int(os.getenv('FOOTING_LEVEL_2D', '63'))
    FOOTING_LEVEL_3D = int(os.getenv('FOOTING_LEVEL_3D', '8'))
    FOOTING_STEPS = int(os.getenv('FOOTING_STEPS', '0'))  # 0 は T/τ ステップすべて
    DENSE_EIG_LIMIT = int(os.getenv('DENSE_EIG_LIMIT', '600'))

    # テスト設定
    RUN_SLOW_TESTS = _env_bool('RUN_SLOW_TESTS')

    @classmethod
    def default_tolerance(cls, dim):
        return cls.MINRES_TOL_2D if dim == 2 else cls.MINRES_TOL_3D

    @classmethod
    def validate_config(cls):
        """設定の妥当性をチェックします"""
        errors = []
        if cls.HDG_DEGREE < 2:
            errors.append(f"HDG_DEGREE は 2 以上が必要です (現在: {cls.HDG_DEGREE})")
        for name in ('MINRES_TOL_2D', 'MINRES_TOL_3D'):
            value = getattr(cls, name)
            if not 0.0 < value < 1.0:
                errors.append(f"{name} は (0, 1) の範囲で指定してください (現在: {value})")
        for name in ('SWEEP_WORKERS', 'SWEEP_LEVEL_2D', 'SWEEP_LEVEL_3D',
                     'FOOTING_LEVEL_2D', 'FOOTING_LEVEL_3D'):
            if getattr(cls, name) < 1:
                errors.append(f"{name} は 1 以上が必要です (現在: {getattr(cls, name)})")
        if cls.FOOTING_STEPS < 0:
            errors.append(f"FOOTING_STEPS は 0 以上が必要です (現在: {cls.FOOTING_STEPS})")
        if cls.FOOTING_LEVEL_2D % 3 != 0:
            # Γ1 の端 |x| = 50/3 を格子点に一致させる
            errors.append(f"FOOTING_LEVEL_2D は 3 の倍数が必要です (現在: {cls.FOOTING_LEVEL_2D})")
        if cls.FOOTING_LEVEL_3D % 4 != 0:
            errors.append(f"FOOTING_LEVEL_3D は 4 の倍数が必要です (現在: {cls.FOOTING_LEVEL_3D})")

        if errors:
            raise ValueError(f"設定エラー: {'; '.join(errors)}")


EXPERIMENTS = ('convergence', 'param-sweep', 'footing', 'spectrum')
VARIANTS = ('hdg', 'edg')
PRECONDITIONERS = ('p', 'phat')
PARAMETER_KEYS = ('mu', 'lam', 'alpha', 'c0', 'kappa', 'eta')


@dataclass(frozen=True)
class RunConfig:
    """実験1回分の設定。key=value 形式のファイルとコマンドライン引数から構築します"""
    experiment: str = 'convergence'
    dim: int = 2
    level: int = 0  # 0 は実験ごとの既定値
    levels: int = 4
    mesh_file: str = ''
    variant: str = 'hdg'
    preconditioner: str = 'phat'
    tolerance: float = 0.0  # 0 は次元ごとの既定値を使う
    degree: int = Config.HDG_DEGREE
    output_dir: str = Config.OUTPUT_DIR
    workers: int = Config.SWEEP_WORKERS
    steps: int = Config.FOOTING_STEPS  # 0 は T/τ ステップすべて
    taus: tuple = (1.0, 0.25, 0.025, 0.0025, 0.0001)
    write_vtk: bool = False
    params: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path):
        """key=value ファイルを読み込みます（未知のキーはエラー）"""
        values = dotenv_values(path)
        return cls().with_overrides(**{k.lower(): v for k, v in values.items()})

    def with_overrides(self, **overrides):
        known = {f.name: f for f in fields(self)}
        changes = {}
        params = dict(self.params)
        for key, raw in overrides.items():
            if raw is None:
                continue
            key = key.replace('-', '_')
            if key in PARAMETER_KEYS:
                params[key] = float(raw)
                continue
            if key not in known:
                raise ValueError(f"未知の設定キーです: {key}")
            changes[key] = self._convert(key, raw)
        return replace(self, params=params, **changes)

    def _convert(self, key, raw):
        current = getattr(self, key)
        if not isinstance(raw, str):
            return tuple(raw) if key == 'taus' else raw
        if key == 'taus':
            return tuple(float(v) for v in raw.replace(',', ' ').split())
        if key == 'params':
            raise ValueError("params は個別のキー (mu, lam, ...) で指定してください")
        if isinstance(current, bool):
            return raw.lower() in ('1', 'true', 'yes')
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        return raw.lower() if key in ('experiment', 'variant', 'preconditioner') else raw

    @property
    def effective_tolerance(self):
        return self.tolerance if self.tolerance > 0 else Config.default_tolerance(self.dim)

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment は {EXPERIMENTS} のいずれかです (現在: {self.experiment})")
        if self.dim not in (2, 3):
            raise ValueError(f"dim は 2 または 3 です (現在: {self.dim})")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant は {VARIANTS} のいずれかです (現在: {self.variant})")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"preconditioner は {PRECONDITIONERS} のいずれかです (現在: {self.preconditioner})")
        if not 0.0 < self.effective_tolerance < 1.0:
            raise ValueError(f"tolerance は (0, 1) の範囲で指定してください (現在: {self.tolerance})")
        if self.level < 0 or self.levels < 1:
            raise ValueError(f"メッシュレベルは 1 以上（level=0 は既定値）が必要です (level={self.level}, levels={self.levels})")
        if self.degree < 2:
            raise ValueError(f"degree は 2 以上が必要です (現在: {self.degree})")
        if self.steps < 0 or self.workers < 1:
            raise ValueError(f"steps は 0 以上、workers は 1 以上が必要です (steps={self.steps}, workers={self.workers})")
        if not self.taus or min(self.taus) <= 0:
            raise ValueError(f"taus は正の値で指定してください (現在: {self.taus})")
        return self

    @property
    def resolved_level(self):
        """level=0 のとき実験ごとの既定のメッシュ分割数"""
        if self.level > 0:
            return self.level
        defaults = {
            'convergence': 4,
            'param-sweep': Config.SWEEP_LEVEL_2D if self.dim == 2 else Config.SWEEP_LEVEL_3D,
            'footing': Config.FOOTING_LEVEL_2D if self.dim == 2 else Config.FOOTING_LEVEL_3D,
            'spectrum': 2,
        }
        return defaults[self.experiment]
