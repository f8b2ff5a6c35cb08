"""Accuracy-hardware (Acc-HW) product and efficiency reports.

Hardware cost is the detector count.  The product is oriented so that fewer
detectors for the same accuracy scores higher:

    acc_hw = (acc_multi / acc_single) * (detectors_single_total / detectors_multi)
"""

from dataclasses import dataclass, field

__all__ = ["acc_hw", "EfficiencyReport", "efficiency_report", "PUBLISHED"]


def acc_hw(acc_multi, acc_single, det_multi, det_single_total):
    if not (0 < acc_multi <= 1 and 0 < acc_single <= 1):
        raise ValueError("accuracies must lie in (0, 1]")
    if det_multi <= 0 or det_single_total <= 0:
        raise ValueError("detector counts must be positive")
    return (acc_multi / acc_single) * (det_single_total / det_multi)


# Published accuracies and detector counts: (task, acc_multi, acc_single,
# det_multi, det_single_total, reported Acc-HW; None where reported as "~1").
PUBLISHED = {
    "two_task_10_regions": [("MNIST", 0.977, 0.981, 10, 20, 1.99),
                            ("Fashion-MNIST", 0.886, 0.889, 10, 20, 1.99)],
    "two_task_20_regions": [("MNIST", 0.979, 0.981, 20, 20, None),
                            ("Fashion-MNIST", 0.883, 0.889, 20, 20, None)],
    "four_task_10_regions": [("MNIST", 0.958, 0.981, 10, 40, 3.91),
                             ("Fashion-MNIST", 0.857, 0.889, 10, 40, 3.85),
                             ("KMNIST", 0.860, 0.861, 10, 40, 4.00),
                             ("EMNIST", 0.884, 0.909, 10, 40, 3.89)],
}


@dataclass
class EfficiencyReport:
    tasks: list
    acc_single: list
    acc_multi: list
    det_single_total: int
    det_multi: int
    values: list = field(default_factory=list)

    def __post_init__(self):
        if not self.values:
            self.values = [acc_hw(m, s, self.det_multi, self.det_single_total)
                           for m, s in zip(self.acc_multi, self.acc_single)]
        if any(v <= 0 for v in self.values):
            raise ValueError("Acc-HW must be positive")

    def rows(self):
        return [{"task": t, "acc_single": s, "acc_multi": m, "det_single_total":
                 self.det_single_total, "det_multi": self.det_multi, "acc_hw": v}
                for t, s, m, v in zip(self.tasks, self.acc_single, self.acc_multi, self.values)]


def efficiency_report(tasks, acc_multi, acc_single, det_multi, det_single_per_task=None,
                      det_single_total=None):
    """Build a report; single-task detectors default to one set of regions per task."""
    if det_single_total is None:
        det_single_total = (det_single_per_task or det_multi) * len(tasks)
    return EfficiencyReport(list(tasks), list(acc_single), list(acc_multi), det_single_total,
                            det_multi)
