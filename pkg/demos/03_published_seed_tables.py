# Re-deriving the seed-variance statistics from the bundled per-seed tables.

from cfflab import stats
from cfflab.reproduce import format_checks, reference_checks

# The standard CIFAR-10 table: fourteen seeds per margin type.
rows = stats.load_fixture("cifar10_standard")
print(stats.audit(rows, group_by="margin").to_text())

# Grouped by stability mode instead, the spread is much closer.
print(stats.audit(rows, group_by="stability").to_text())

# Every recomputed statistic next to its published value.
print(format_checks(reference_checks()))
