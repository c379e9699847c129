"""Switching separatrices of bistable systems under pulse inputs."""
