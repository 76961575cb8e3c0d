"""Exception types shared across tubelab."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class BudgetExceeded(MemoryError):
    """A grid would exceed the configured cell budget."""

    def __init__(self, required: int, budget: int):
        self.required = int(required)
        self.budget = int(budget)
        super().__init__(
            f"grid needs {self.required} cells, budget is {self.budget} "
            f"(raise --budget-cells to at least {self.required})"
        )
