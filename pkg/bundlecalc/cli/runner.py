import asyncio
import logging
from typing import Dict, List, Optional, Tuple

from bundlecalc.common.config import (
    CHECK_POINTS,
    CHECK_SEED,
    CHECK_TOLERANCE,
    CHECK_WORKERS,
    FD_CURVATURE_TOLERANCE,
)
from bundlecalc.common.models import CheckReport, CheckRequest, Scenario
from bundlecalc.cli.scenario import build_objects
from bundlecalc.geometry import covariant_calculus as calculus
from bundlecalc.geometry.connections import ClassicalConnection
from bundlecalc.geometry.curvature import CurvatureField, curvature, perturbed
from bundlecalc.geometry.probes import check_points

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INVALID = 2


class CheckRunner:
    """Runs the checks of one scenario concurrently and returns order-normalized reports"""

    def __init__(
        self,
        scenario: Scenario,
        tol: Optional[float] = None,
        points: Optional[int] = None,
        seed: Optional[int] = None,
        workers: int = CHECK_WORKERS,
    ):
        self.scenario = scenario
        self.objects = build_objects(scenario)
        options = scenario.options
        self.cli_tol = tol
        self.cli_points = points
        self.tol = options.tol if options.tol is not None else CHECK_TOLERANCE
        self.points = options.points if options.points is not None else CHECK_POINTS
        self.seed = seed if seed is not None else options.seed if options.seed is not None else CHECK_SEED
        self.perturbation = options.perturb_curvature
        self.workers = max(1, workers)
        self.classical = self.objects.classical or ClassicalConnection.zero(scenario.base_dim)
        self._curvatures: Dict[str, CurvatureField] = {}

    def tolerance_for(self, request: CheckRequest) -> float:
        if request.name == "curvature":
            tol = request.tol if request.tol is not None else FD_CURVATURE_TOLERANCE
            if self.cli_tol is not None and self.cli_tol != tol:
                logger.info(f"--tol {self.cli_tol:g} not applied to curvature[{','.join(request.args)}]; using {tol:g}")
            return tol
        if self.cli_tol is not None:
            return self.cli_tol
        return request.tol if request.tol is not None else self.tol

    def point_count_for(self, request: CheckRequest) -> int:
        if self.cli_points is not None:
            return self.cli_points
        return request.points if request.points is not None else self.points

    def curvature_of(self, name: str) -> Optional[CurvatureField]:
        """Shared R[K] for the named connection, perturbed when the scenario asks for a negative control"""
        if not self.perturbation:
            return None
        if name not in self._curvatures:
            self._curvatures[name] = perturbed(curvature(self.objects.connections[name]), self.perturbation)
        return self._curvatures[name]

    def prepare(self):
        # Perturbed curvatures are built before the checks fan out to threads.
        for request in self.scenario.checks:
            for name in request.args:
                if name in self.objects.connections:
                    self.curvature_of(name)

    def run_one(self, request: CheckRequest) -> CheckReport:
        tol = self.tolerance_for(request)
        points = check_points(self.scenario.base_dim, self.point_count_for(request), self.seed)
        args = request.args
        connections = [self.objects.connections[a] for a in args if a in self.objects.connections]
        fields = [self.objects.fields[a] for a in args if a in self.objects.fields]
        K = connections[0] if connections else None
        G = self.classical
        target = list(args)

        match request.name:
            case "curvature":
                report = calculus.check_curvature_oracle(K, points, tol, R=self.curvature_of(K.name), target=target)
            case "dual_curvature":
                report = calculus.check_dual_curvature(K, points, tol, target=target)
            case "tensor_curvature":
                report = calculus.check_tensor_curvature(K, connections[1], points, tol, target=target)
            case "bilinear_decomposition":
                report = calculus.check_bilinear_decomposition(K, connections[1], points, tol, target=target)
            case "bianchi_linear":
                report = calculus.check_bianchi_linear(K, G, points, tol, R=self.curvature_of(K.name), target=target)
            case "bianchi_classical":
                report = calculus.check_bianchi_classical(G, points, tol, target=target)
            case "ricci":
                t, Phi = fields[0]
                R = self.curvature_of(K.name) if K is not None else None
                report = calculus.check_ricci_identity(K, G, t, Phi, points, tol, R=R, target=target)
            case "ricci_on_curvature":
                report = calculus.check_ricci_on_curvature(K, G, points, tol, R=self.curvature_of(K.name), target=target)
            case "product_connection":
                t, Phi = fields[0]
                report = calculus.check_product_connection(K, G, t, Phi, points, tol, target=target)
            case "duality_pairing":
                (_, Phi), (_, Psi) = fields
                report = calculus.check_duality_pairing(K, G, Phi, Psi, points, tol, target=target)
            case _:
                raise ValueError(f"Unknown check '{request.name}'")

        report.seed = self.seed
        return report

    async def _run_guarded(self, semaphore: asyncio.Semaphore, request: CheckRequest) -> CheckReport:
        async with semaphore:
            return await asyncio.to_thread(self.run_one, request)

    async def run(self) -> List[CheckReport]:
        self.prepare()
        semaphore = asyncio.Semaphore(self.workers)
        logger.info(f"Running {len(self.scenario.checks)} check(s) with {self.workers} worker(s), seed {self.seed}")
        reports = await asyncio.gather(
            *(self._run_guarded(semaphore, request) for request in self.scenario.checks)
        )
        ranked = sorted(enumerate(reports), key=lambda item: (item[1].name, item[0]))
        return [report for _, report in ranked]


def exit_status(reports: List[CheckReport]) -> int:
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAILED


async def run_checks_async(
    scenario: Scenario,
    tol: Optional[float] = None,
    points: Optional[int] = None,
    seed: Optional[int] = None,
) -> Tuple[List[CheckReport], int]:
    reports = await CheckRunner(scenario, tol, points, seed).run()
    return reports, exit_status(reports)


def run_checks(
    scenario: Scenario,
    tol: Optional[float] = None,
    points: Optional[int] = None,
    seed: Optional[int] = None,
) -> Tuple[List[CheckReport], int]:
    return asyncio.run(run_checks_async(scenario, tol, points, seed))


# -------------------------------
# Report Formatting
# -------------------------------

def _point_passed(report: CheckReport, k: int) -> bool:
    residual = report.residuals[k]
    return residual.error is None and residual.residual <= report.tolerance


def format_machine(reports: List[CheckReport]) -> str:
    lines = []
    for report in reports:
        for k, residual in enumerate(report.residuals):
            verdict = "true" if _point_passed(report, k) else "false"
            lines.append(f"check={report.label} point={residual.index} residual={residual.residual:.6e} pass={verdict}")
    return "\n".join(lines) + ("\n" if lines else "")


def format_text(reports: List[CheckReport]) -> str:
    lines = []
    for report in reports:
        lines.append(f"== {report.label} ==")
        settings = [f"tolerance {report.tolerance:g}", f"seed {report.seed}"]
        settings += [f"{key} {value}" for key, value in sorted(report.parameters.items())]
        lines.append("  " + ", ".join(settings))
        for k, residual in enumerate(report.residuals):
            point = ", ".join(f"{x:.6g}" for x in residual.point)
            verdict = "ok" if _point_passed(report, k) else "FAIL"
            line = f"  point {residual.index} ({point}): residual {residual.residual:.6e} {verdict}"
            if residual.components:
                line += " [" + ", ".join(f"{key} {value:.3e}" for key, value in sorted(residual.components.items())) + "]"
            if residual.error:
                line += f" error: {residual.error}"
            lines.append(line)
        lines.extend(f"  {detail}" for detail in report.details)
        lines.append(f"{'PASS' if report.passed else 'FAIL'} {report.label} (worst residual {report.worst:.3e})")
        lines.append("")
    passed = sum(r.passed for r in reports)
    lines.append(f"Summary: {passed}/{len(reports)} checks passed")
    return "\n".join(lines) + "\n"
