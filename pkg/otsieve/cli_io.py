"""
Run configuration and file formats of the batch commands.
"""
import json
import logging
import os
import platform
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from otsieve import __version__
from otsieve.common import atomic_write
from otsieve.dgp_simulation import DgpConfig, load_preset
from otsieve.errors import ConfigError, CsvFormatError
from otsieve.estimators import EstimatorOptions, MatchedSample
from otsieve.settings import load_dict_from_json_file, settings

log = logging.getLogger(__name__)

MATCHED_COLUMNS = ["wage", "x_C", "x_M", "y_C", "y_M"]
MANIFEST_FILE = "manifest.json"
STOCHASTIC_COMMANDS = ("simulate", "mc", "sweep")


def _layer(values, source):
    """
    Updates `values` from `source`, merging the nested dgp block key by key.
    """
    source = dict(source)
    if "dgp" in source:
        dgp = dict(values.get("dgp", {}))
        dgp.update(source.pop("dgp"))
        values["dgp"] = dgp
    values.update(source)


@dataclass
class RunConfig:
    """
    Parameters of one command. Built from a named preset, then a user JSON
    file, then command-line values, later sources winning.
    """

    command: str
    seed: int = None
    output_dir: str = "out"
    preset: str = None
    dgp: dict = field(default_factory=dict)
    estimators: list = field(default_factory=lambda: ["sml", "sls", "sgls"])
    reps: int = 50
    method: str = "sgls"
    degrees: list = field(default_factory=lambda: [3, 3])
    convexity: bool = False
    parallelism: int = 1
    n_starts: int = 5
    max_iter: int = 500
    tol: float = 1e-10
    float_format: str = "%.10g"
    input: str = None
    input_t1: str = None
    standard_errors: bool = True
    alpha_values: list = field(
        default_factory=lambda: [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0]
    )
    mode: str = "task_biased_only"
    scale: str = "log"
    diagnostic: str = "summary"
    columns: str = "x"
    normalization: str = "zero_mean"

    def __post_init__(self):
        for name in ("input", "input_t1"):
            path = getattr(self, name)
            if path is not None and not os.path.isfile(path):
                raise ConfigError(
                    "input file %s does not exist" % path, path=path
                )
        if self.command in STOCHASTIC_COMMANDS and self.seed is None:
            raise ConfigError("command %s needs a seed" % self.command)
        self.degrees = [int(d) for d in self.degrees]
        if len(self.degrees) != 2 or min(self.degrees) < 0:
            raise ConfigError("degrees must be two nonnegative integers")

    @classmethod
    def build(
        cls,
        command,
        preset=None,
        config_path=None,
        run_settings=None,
        **flags
    ):
        run_settings = run_settings or settings
        values = {
            key: getattr(run_settings, key)
            for key in (
                "seed",
                "output_dir",
                "convexity",
                "parallelism",
                "n_starts",
                "max_iter",
                "tol",
                "float_format",
            )
        }
        values["degrees"] = list(run_settings.degrees)
        if preset is not None:
            _layer(values, load_preset(preset))
            values["preset"] = preset
        if config_path is not None:
            try:
                user = load_dict_from_json_file(config_path)
            except (OSError, ValueError) as err:
                raise ConfigError(
                    "cannot read config %s: %s" % (config_path, err)
                )
            _layer(values, user)
        dgp = dict(values.get("dgp", {}))
        for key in ("n", "family", "error_family"):
            if flags.get(key) is not None:
                dgp[key] = flags.pop(key)
        for key in list(flags):
            if key.startswith("dgp_"):
                val = flags.pop(key)
                if val is not None:
                    dgp[key[len("dgp_"):]] = val
        values["dgp"] = dgp
        values.update({k: v for k, v in flags.items() if v is not None})
        values.pop("description", None)
        known = set(cls.__dataclass_fields__)
        extra = sorted(set(values) - known)
        if extra:
            raise ConfigError("unknown config keys %s" % extra, keys=extra)
        values.pop("command", None)
        return cls(command=command, **values)

    def dgp_config(self):
        dgp = dict(self.dgp)
        dgp["seed"] = self.seed
        dgp.setdefault("name", self.preset or "custom")
        return DgpConfig.from_dict(dgp)

    def estimator_options(self):
        return EstimatorOptions(
            degrees=tuple(self.degrees),
            convexity=bool(self.convexity),
            n_starts=int(self.n_starts),
            max_iter=int(self.max_iter),
            tol=float(self.tol),
        )

    def to_dict(self):
        return asdict(self)


def _to_float(text):
    # correctly rounded, so %.17g output reads back bit for bit
    try:
        return float(text)
    except ValueError:
        return np.nan


def _cell_error(frame, numeric):
    bad = numeric.isna()
    if not bad.values.any():
        return None
    row, col = np.argwhere(bad.values)[0]
    return int(row) + 1, frame.columns[col], frame.iat[row, col]


def parse_matched_csv(path):
    """
    Reads a `wage,x_C,x_M,y_C,y_M` file. Errors name the 1-based data row
    and the column of the first bad cell.
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise CsvFormatError("%s is empty" % path, row=0)
    header = list(frame.columns)
    if header != MATCHED_COLUMNS:
        missing = [c for c in MATCHED_COLUMNS if c not in header]
        raise CsvFormatError(
            "header must be exactly %s, got %s"
            % (",".join(MATCHED_COLUMNS), ",".join(header)),
            row=0,
            column=missing[0] if missing else None,
        )
    if len(frame) == 0:
        raise CsvFormatError("%s has no data rows" % path, row=1)
    numeric = frame.apply(lambda col: col.str.strip().map(_to_float))
    numeric = numeric.where(np.isfinite(numeric))
    bad = _cell_error(frame, numeric)
    if bad is not None:
        row, column, value = bad
        raise CsvFormatError(
            "row %d, column %s: %r is not a finite number"
            % (row, column, value),
            row=row,
            column=column,
        )
    values = numeric.to_numpy(dtype=float)
    return MatchedSample(values[:, 0], values[:, 1:3], values[:, 3:5])


def matched_frame(sample):
    return pd.DataFrame(
        np.column_stack([sample.w, sample.X, sample.Y]),
        columns=MATCHED_COLUMNS,
    )


def write_matched_csv(sample, path, float_format="%.17g"):
    frame = matched_frame(sample)
    return atomic_write(
        path,
        lambda fp: frame.to_csv(fp, index=False, float_format=float_format),
    )


def write_frame_csv(frame, path, float_format=None):
    float_format = float_format or settings.float_format
    return atomic_write(
        path,
        lambda fp: frame.to_csv(fp, index=False, float_format=float_format),
    )


def write_report_json(report, path):
    return atomic_write(path, lambda fp: fp.write(report.to_json() + "\n"))


def write_gamma_csv(report, path):
    return atomic_write(path, report.gamma_to_csv)


def _versions():
    import joblib
    import scipy

    return {
        "otsieve": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "joblib": joblib.__version__,
    }


def write_manifest(outdir, command, config, seed, wall_time, outputs=None):
    """
    Records what produced the files in `outdir`. Only `wall_time` varies
    between reruns of the same config.
    """
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "versions": _versions(),
        "outputs": sorted(outputs or []),
        "wall_time": wall_time,
    }
    text = json.dumps(manifest, indent=2, sort_keys=True, default=str)
    return atomic_write(
        os.path.join(outdir, MANIFEST_FILE), lambda fp: fp.write(text + "\n")
    )
