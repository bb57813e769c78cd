"""l1-penalized quantile regression with an unknown change point."""
