"""Federated-learning simulator with variable pruning and one-shot distillation."""
