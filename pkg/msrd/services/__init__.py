"""Service layer: simulation, limits and checks"""
