"""voxhunt: curiosity/imitation playtesting agents for voxel navigation maps.

Train agents that explore around scripted expert routes, log every trajectory
they produce, and filter the suspicious ones (goal-reaching, exploration-heavy,
high-novelty) against planted bug regions.
"""

__version__ = "0.1.0"
