import argparse
import json
import logging
import logging.handlers
import os
import sys
from os.path import abspath, join
from typing import List, Optional, Sequence, Tuple, Union

from dotenv import dotenv_values, find_dotenv  # type: ignore

from helpers.AcceptanceHelper import AcceptanceRunner
from helpers.ConfigHelper import Config
from helpers.Exceptions import BadUserInput, ConfigError, DecayFitError, ScenarioError
from helpers.FlowHelper import EXPLICIT, PARAMETRIC, REPRESENTATIONS, SCHEMES, STEPPINGS, FlowEngine, fit_decay
from helpers.G2Helper import G2Checker
from helpers.ScenarioHelper import Scenario, ScenarioCatalog
from helpers.StabilityHelper import StabilityAnalyzer

VERSION = "v1.0.0"
LOG_FOLDER = "logs"
LOG_FILENAME = "stableflow.log"
DEFAULT_CONFIG_FILEPATH = join("helpers", ".env.default")
# Strong stability and mean curvature flow near minimal curves
# Make sure you installed all requirements using 'pip install -r requirements.txt'


class StableFlow:
    def main(self, argv: Optional[Sequence[str]] = None) -> None:
        try:
            # Create logger
            self.create_logger()
            self.log.info(f"Script started ({VERSION})")

            # Create argument parser
            self.create_argument_parser(argv)

            # Load config
            self.load_config()

            # Create syslog handler
            if self.conf.SYSLOG_TARGET:
                address: Union[Tuple[str, int], str] = (
                    (self.conf.SYSLOG_TARGET, int(self.conf.SYSLOG_PORT))
                    if self.conf.SYSLOG_PORT
                    else self.conf.SYSLOG_TARGET
                )
                syslog_handler = logging.handlers.SysLogHandler(address=address)
                syslog_handler.setFormatter(self.logging_format)
                self.log.addHandler(syslog_handler)

            # Print log messages to the console (VERBOSE)
            if self.conf.VERBOSE:
                console_handler = logging.StreamHandler(sys.stderr)
                console_handler.setFormatter(self.logging_format)
                self.log.addHandler(console_handler)

            self.catalog = ScenarioCatalog(self.log, self.conf.SCENARIO_FOLDER)

            # Start
            exit_code = 0
            if self.args.command == "analyze":
                self.analyze()
            elif self.args.command == "flow":
                self.flow()
            elif self.args.command == "g2-check":
                exit_code = self.g2_check()
            elif self.args.command == "hessian-probe":
                self.hessian_probe()
            elif self.args.command == "accept":
                exit_code = self.accept()
            else:
                # Wrong arguments
                print("Unknown command, check your input!\n")
                self.parser.print_help()
                sys.exit(2)

            # It's over now
            self.log.info("Script ended\n")
            if exit_code:
                sys.exit(exit_code)

        except (ScenarioError, ConfigError, BadUserInput) as e:
            self.log.error(f"{type(e).__name__}: {str(e)}")
            print(f"\n{type(e).__name__}: {str(e)}")
            raise SystemExit(2) from e
        except Exception as e:
            self.log.exception(e)
            self.log.info("Script aborted")
            print(f"\nScript aborted: {type(e).__name__}: {str(e)}")
            print(f"See log file ({join(LOG_FOLDER, LOG_FILENAME)}) for all details")
            raise SystemExit(1) from e

    def create_logger(self) -> None:
        """Creates the logger object"""
        # Set logging configuration
        if not os.path.exists(LOG_FOLDER):
            os.makedirs(LOG_FOLDER)
        log = logging.getLogger("StableFlow")
        dotenv_log = logging.getLogger("dotenv.main")
        log.setLevel(logging.INFO)
        self.logging_format = logging.Formatter("%(asctime)s %(levelname)s %(message)s")
        log_filepath = join(LOG_FOLDER, LOG_FILENAME)
        handler = logging.FileHandler(filename=log_filepath, mode="a", encoding="utf8")
        handler.setLevel(logging.INFO)
        handler.setFormatter(self.logging_format)
        log.addHandler(handler)
        dotenv_log.addHandler(handler)
        self.log = log

    def create_argument_parser(self, argv: Optional[Sequence[str]] = None) -> None:
        """Creates the argument parser object"""
        # Setup argument parser
        parser = argparse.ArgumentParser(
            description="Strong stability and mean curvature flow near minimal closed curves."
        )
        parser.add_argument(
            "-e", "--env-file", type=str, required=False, help="custom path to your .env config file"
        )
        parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
        commands = parser.add_subparsers(dest="command")

        analyze = commands.add_parser("analyze", help="strong stability margin and Jacobi spectrum of a scenario")
        analyze.add_argument("scenario", type=str, help="builtin scenario id or user scenario file name")
        analyze.add_argument("--nodes", type=int, default=256, help="grid nodes along the minimal curve")
        analyze.add_argument("--eigenvalues", type=int, required=False, help="number of Jacobi eigenvalues")

        flow = commands.add_parser("flow", help="run the mean curvature flow and write the monitor trace")
        flow.add_argument("scenario", type=str, help="builtin scenario id or user scenario file name")
        flow.add_argument("--rep", choices=REPRESENTATIONS, default=PARAMETRIC, help="flow representation")
        flow.add_argument("--amp", type=float, required=False, help="perturbation amplitude")
        flow.add_argument("--modes", type=str, required=False, help="comma separated perturbation modes")
        flow.add_argument("--nodes", type=int, required=False, help="grid nodes")
        flow.add_argument("--dt", type=float, required=False, help="time step (default: CFL bound)")
        flow.add_argument("--t-final", type=float, required=False, help="time horizon")
        flow.add_argument("--scheme", choices=SCHEMES, default="backward", help="linearized time stepping")
        flow.add_argument("--stepping", choices=STEPPINGS, default=EXPLICIT, help="parametric time stepping")
        flow.add_argument("--no-gate", action="store_true", help="skip the smallness check on the initial data")
        flow.add_argument("--output", type=str, required=False, help="custom path of the CSV trace")

        g2 = commands.add_parser("g2-check", help="verify the G2 and coassociative identities")
        g2.add_argument("--seeds", type=str, required=False, help="comma separated random seeds")
        g2.add_argument("--samples", type=int, default=1000, help="random samples per seed")

        probe = commands.add_parser("hessian-probe", help="sample tr Hess psi against fs^2 + psi in the tube")
        probe.add_argument("scenario", type=str, help="builtin scenario id or user scenario file name")
        probe.add_argument("--samples", type=int, required=False, help="number of sampled lines")
        probe.add_argument("--radius", type=float, required=False, help="sampling radius")

        accept = commands.add_parser("accept", help="run the acceptance criteria")
        accept.add_argument("--criteria", type=str, required=False, help="comma separated criterion numbers")

        # Parse arguments
        self.parser = parser
        self.args = parser.parse_args(argv)

    def load_config(self) -> None:
        """Loads the config from file or environment variables"""
        # Load default config
        self.log.info("Loading config (last value wins)")
        default_config = find_dotenv(DEFAULT_CONFIG_FILEPATH, raise_error_if_not_found=True)
        self.log.info(f"Loading default config from {default_config}")
        default_config_values = dotenv_values(default_config)
        if self.args.env_file:
            if not os.path.exists(self.args.env_file):
                raise ConfigError("Could not find the custom user config file, check your input!")
            # Load config from custom path
            user_config = abspath(self.args.env_file)
        else:
            # Search config path
            user_config = find_dotenv(usecwd=True)
        if user_config:
            # Load config from file
            self.log.info(f"Loading file config from {user_config}")
            file_config_values = dotenv_values(user_config)
        else:
            file_config_values = {}

        # Load config from environment vars
        self.log.info("Loading os environment config")
        environment_config_values = dict(os.environ)
        self.log.info("Config loading complete")
        raw_config = {**default_config_values, **file_config_values, **environment_config_values}

        # Parse config
        self.conf = Config(self.log, raw_config)
        self.log.info("Config successfully parsed")

    def analyze(self) -> None:
        """Prints the stability report and writes its JSON record"""
        scenario = self.catalog.get(self.args.scenario)
        analyzer = StabilityAnalyzer(
            self.log,
            self.__chart(scenario),
            self.conf.MARGIN_TOLERANCE,
            self.conf.MINIMALITY_TOLERANCE,
        )
        report = analyzer.analyze(self.args.nodes, self.args.eigenvalues or self.conf.JACOBI_EIGENVALUES)
        print(f"\n{report}\n")
        filename = join(self.conf.OUTPUT_FOLDER, f"{scenario.id}_analysis.json")
        os.makedirs(self.conf.OUTPUT_FOLDER, exist_ok=True)
        with open(filename, "w", encoding="utf8", newline="\n") as handle:
            json.dump(report.to_record(), handle, indent=2, sort_keys=True)
            handle.write("\n")
        self.log.info(f"{scenario.id}: analysis record written to '{filename}'")
        print(f"Record written to {filename}")

    def flow(self) -> None:
        """Runs one flow, fits the decay rates and writes the trace"""
        scenario = self.catalog.get(self.args.scenario)
        modes = [int(k) for k in self.args.modes.split(",")] if self.args.modes else None
        config = scenario.flow_config(
            self.conf,
            representation=self.args.rep,
            amplitude=self.args.amp,
            modes=modes,
            nodes=self.args.nodes,
            dt=self.args.dt,
            t_final=self.args.t_final,
            scheme=self.args.scheme,
            stepping=self.args.stepping,
            gate=False if self.args.no_gate else None,
        )
        engine = FlowEngine(
            self.log,
            scenario.metric,
            scenario.chart(self.log, self.conf),
            self.conf.MARGIN_TOLERANCE,
            self.conf.MINIMALITY_TOLERANCE,
        )
        initial = scenario.initial_curve(config.nodes) if scenario.initial_curve else None
        trace = engine.run(config, initial)
        if scenario.has_reference:
            for field in ("psi_max", "max_one_minus_star_omega", "l2_ii_difference"):
                try:
                    fit_decay(trace, field, config.fit_window)
                except DecayFitError as e:
                    self.log.warning(f"{scenario.id}: no decay rate for {field}: {e}")
        filename = self.args.output or join(self.conf.OUTPUT_FOLDER, f"{scenario.id}_{config.representation}.csv")
        trace.write_csv(filename)
        trace.write_summary(os.path.splitext(filename)[0] + ".json", config.to_record())

        last = trace.rows[-1]
        print(f"\n{trace}")
        for name in trace.columns[1:]:
            print(f"{name:<28} {last[name]:.6e}")
        for field, rate in trace.rates.items():
            print(f"decay rate of {field:<14} {rate['rate']:.6f} (r2 {rate['r2']:.6f})")
        print(f"\nTrace written to {filename}")

    def g2_check(self) -> int:
        seeds = self.__integers(self.args.seeds, "--seeds") if self.args.seeds else [self.conf.SEED]
        checker = G2Checker(self.log)
        failed = 0
        for seed in seeds:
            print(f"\nseed {seed}")
            for check in checker.run(self.args.samples, seed):
                print(check)
                failed += not check.passed
        print(f"\n{failed} identity check(s) failed" if failed else "\nAll identity checks passed")
        return 1 if failed else 0

    def hessian_probe(self) -> None:
        scenario = self.catalog.get(self.args.scenario)
        report = self.__chart(scenario).hessian_psi_probe(
            self.args.samples or self.conf.PROBE_SAMPLES,
            self.conf.SEED,
            self.args.radius or self.conf.PROBE_RADIUS,
            self.conf.PROBE_STEP,
        )
        print(f"\n{report}")

    def accept(self) -> int:
        runner = AcceptanceRunner(self.log, self.conf)
        selection = self.__integers(self.args.criteria, "--criteria") if self.args.criteria else None
        if selection and not set(selection) <= set(runner.criteria):
            raise BadUserInput(f"Unknown acceptance criteria, choose from {sorted(runner.criteria)}")
        results = runner.run(selection)
        print("")
        for result in results:
            print(result)
        failed = [result.number for result in results if not result.passed]
        print(f"\nFailed criteria: {failed}" if failed else "\nAll acceptance criteria passed")
        return 1 if failed else 0

    def __chart(self, scenario: Scenario):
        tc = scenario.chart(self.log, self.conf)
        if tc is None:
            raise BadUserInput(f"Scenario '{scenario.id}' has no minimal reference curve to analyze")
        return tc

    @staticmethod
    def __integers(text: str, option: str) -> List[int]:
        try:
            return [int(value) for value in text.split(",")]
        except ValueError as e:
            raise BadUserInput(f"{option} needs comma separated integers") from e


if __name__ == "__main__":
    StableFlow().main()
