"""Loss, optimiser and training loops."""
