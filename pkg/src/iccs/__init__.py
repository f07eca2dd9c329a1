"""Desk-scale integrated control system for a simulated laser facility.

Layered architecture: a distribution bus connects simulated front-end
processors, an industrial-controls segment, framework services, subsystem
supervisors, and a shot director that conducts the countdown. The facility
harness wires everything together and exposes an operator gateway.
"""

__version__ = "0.1.0"
