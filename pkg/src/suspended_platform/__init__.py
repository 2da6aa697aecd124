"""Simulation, estimation and control of a cable-suspended aerial platform."""
