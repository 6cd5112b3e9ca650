"""Tool-based manipulation of amorphous particle materials: simulation,
grid-map observations, task rewards, and a from-scratch PPO trainer."""

__version__ = "0.1.0"
