"""Example distributed programs built on the topology, service, and launch
layers. Importing a gallery module registers its factories, so manifests
that list these modules work in child processes too."""
from . import actor_learner, es, mapreduce, param_server, producer_consumer

__all__ = ["actor_learner", "es", "mapreduce", "param_server", "producer_consumer"]
