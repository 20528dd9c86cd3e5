from logging import Logger
from os.path import abspath
from typing import Dict, List, Union

from helpers.Exceptions import ConfigError


class Config:
    """Class for parsing config .env files"""

    def __init__(self, log: Logger, raw_config: Dict[str, Union[str, None]]) -> None:
        self._log = log
        self._values = {key: value or "" for key, value in raw_config.items()}
        try:
            self.OUTPUT_FOLDER = abspath(self._values["OUTPUT_FOLDER"])
            self.SCENARIO_FOLDER = abspath(self._values["SCENARIO_FOLDER"])
            self.STABLEFLOW_THREADS = self.__get_int("STABLEFLOW_THREADS")
            if self.STABLEFLOW_THREADS < 1:
                msg = "STABLEFLOW_THREADS must be a positive integer!"
                self._log.error(msg)
                raise ConfigError(msg)
            self.MARGIN_TOLERANCE = self.__get_float("MARGIN_TOLERANCE")
            self.MINIMALITY_TOLERANCE = self.__get_float("MINIMALITY_TOLERANCE")
            self.JACOBI_EIGENVALUES = self.__get_int("JACOBI_EIGENVALUES")
            self.CFL = self.__get_float("CFL")
            self.KAPPA = self.__get_float("KAPPA")
            self.BLOWUP_THRESHOLD = self.__get_float("BLOWUP_THRESHOLD")
            self.REPARAM_EVERY = self.__get_int("REPARAM_EVERY")
            self.MONITOR_EVERY = self.__get_float("MONITOR_EVERY")
            self.FERMI_STEPS = self.__get_int("FERMI_STEPS")
            self.NEWTON_MAX_ITERATIONS = self.__get_int("NEWTON_MAX_ITERATIONS")
            self.NEWTON_TOLERANCE = self.__get_float("NEWTON_TOLERANCE")
            self.PROBE_SAMPLES = self.__get_int("PROBE_SAMPLES")
            self.PROBE_RADIUS = self.__get_float("PROBE_RADIUS")
            self.PROBE_STEP = self.__get_float("PROBE_STEP")
            self.SEED = self.__get_int("SEED")
            self.VERBOSE = self.__get_boolean("VERBOSE")
            self.C6_CANDIDATES = [float(value) for value in self.__get_array("C6_CANDIDATES")]
            self.SYSLOG_TARGET = self._values.get("SYSLOG_TARGET", "")
            self.SYSLOG_PORT = self._values.get("SYSLOG_PORT", "")
        except ConfigError:
            raise
        except Exception as e:
            raise ConfigError("Error parsing config, check syntax and required args!") from e

    def __get_boolean(self, key: str) -> bool:
        """Get a boolean value from config as Python boolean"""
        value_str = self._values.get(key, "").lower()
        return value_str in ["true", "1", "t", "y"]

    def __get_int(self, key: str) -> int:
        """Get an integer value from config"""
        return int(self._values[key])

    def __get_float(self, key: str) -> float:
        """Get a float value from config"""
        return float(self._values[key])

    def __get_array(self, key: str) -> List[str]:
        """Get an array from config as Python list"""
        values_str = self._values.get(key, "")
        if not values_str:
            return []
        return [v.strip() for v in values_str.split(",")]
