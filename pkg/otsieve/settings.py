import copy
import json
import os

from otsieve.errors import UsageError


# path to settings.json relative to package dir
SETTINGS_FILE = "settings.json"
# path to dir containing named run presets relative to package dir
CONFIGS_DIR = "configs"
# environment overrides
SETTINGS_ENV = "OTSIEVE_SETTINGS_FILE"
PARALLELISM_ENV = "OTSIEVE_PARALLELISM"

# keys given as whitespace separated lists on the command line
LIST_KEYS = ["degrees"]


def get_root_dir():
    return os.path.dirname(os.path.abspath(__file__))


def get_preset_path(preset_name):
    if not preset_name.endswith(".json"):
        preset_name += ".json"
    return os.path.join(get_root_dir(), CONFIGS_DIR, preset_name)


def list_presets():
    names = []
    for name in sorted(os.listdir(os.path.join(get_root_dir(), CONFIGS_DIR))):
        if name.endswith(".json"):
            names.append(name[: -len(".json")])
    return names


def load_dict_from_json_file(path):
    with open(path, "r") as fp:
        return json.load(fp)


def coerce(key, val, current):
    """
    Converts a command-line string into the type of the current setting.
    """
    if key in LIST_KEYS:
        if isinstance(val, str):
            val = val.replace(",", " ").split()
        return [int(v) for v in val]
    if not isinstance(val, str):
        return val
    if isinstance(current, bool):
        return val.lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(val)
    if isinstance(current, float):
        return float(val)
    return val


class Settings(object):
    """
    Singleton for global settings
    """

    def __init__(self):
        # these get replaced by settings.json and are here for documentation
        self.log_level = None
        self.seed = None
        self.parallelism = None
        self.degrees = None
        self.convexity = None
        self.n_starts = None
        self.max_iter = None
        self.tol = None
        self.output_dir = None
        self.float_format = None
        self.settings_file = SETTINGS_FILE

        self.load_from_settings_file()

    def load_from_settings_file(self, path=None):
        settings_file = self.settings_file
        self.__dict__ = load_dict_from_json_file(
            path or self.get_settings_path()
        )
        self.settings_file = settings_file
        # overwrite with custom settings if it exists
        custom = os.environ.get(SETTINGS_ENV, None)
        if path is None and custom is not None and os.path.exists(custom):
            self.__dict__.update(load_dict_from_json_file(custom))
        parallelism = os.environ.get(PARALLELISM_ENV, None)
        if parallelism is not None:
            self.parallelism = int(parallelism)

    def get_settings_path(self):
        return os.path.join(get_root_dir(), self.settings_file)

    def keys(self):
        return [k for k in self.__dict__ if k != "settings_file"]

    def register_pytest_command_line_options(self, parser):
        for key in self.keys():
            parser.addoption("--%s" % key, action="store", default=None)
        parser.addoption("--settings", action="store", default=None)

    def register_argparse_options(self, parser):
        group = parser.add_argument_group("settings")
        for key in self.keys():
            group.add_argument(
                "--%s" % key.replace("_", "-"),
                dest=key,
                action="store",
                default=None,
            )
        group.add_argument("--settings", action="store", default=None)

    def load_from_pytest_command_line(self, config):
        if config.getoption("settings"):
            self.load_from_settings_file(config.getoption("settings"))
        for key in self.keys():
            self.update(key, config.getoption(key, None))

    def load_from_namespace(self, ns):
        if getattr(ns, "settings", None):
            self.load_from_settings_file(ns.settings)
        for key in self.keys():
            self.update(key, getattr(ns, key, None))

    def update(self, key, new_val):
        if new_val is None:
            return
        try:
            val = coerce(key, new_val, getattr(self, key, None))
        except (TypeError, ValueError):
            raise UsageError(
                "invalid value %r for --%s" % (new_val, key.replace("_", "-")),
                key=key,
            )
        setattr(self, key, val)

    def copy(self):
        """
        Independent snapshot, so one run can layer its flags without
        touching the shared settings.
        """
        out = copy.copy(self)
        out.__dict__ = copy.deepcopy(self.__dict__)
        return out


# shared global settings
settings = Settings()
