"""Repeated zero-sum games with one-sided information spilling over two arenas."""

from .games import (
    GameError,
    GameFamily,
    GameSolution,
    KinkDetected,
    SimplexChart,
    as_belief,
    game_value,
    gradient_from_actions,
    nr_value,
    nr_values_on_points,
    solve_matrix_game,
)

__version__ = "0.1.0"

__all__ = [
    "GameError",
    "GameFamily",
    "GameSolution",
    "KinkDetected",
    "SimplexChart",
    "as_belief",
    "game_value",
    "gradient_from_actions",
    "nr_value",
    "nr_values_on_points",
    "solve_matrix_game",
    "__version__",
]
