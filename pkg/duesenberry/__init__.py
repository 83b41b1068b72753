"""
duesenberry-engine: Monte Carlo construction and verification of Duesenberry
equilibria for populations of agents with type-dependent impatience.

Modules:
    flow_engine         Type flows, common-noise simulation, cocycles, Feller test
    population          Population measures and weighted aggregation
    preferences         Consistent isoelastic preference structures
    policy              Rolling and limit consumption-investment policies
    equilibrium         Equilibrium market construction and its identities
    scenarios           Endowment scenarios and the labor-value check
    decomp_calibration  Premium decomposition and the published calibration
    validation_oracle   Statistical tests and convergence fits
    config              TOML run configuration
    cli                 Command-line entry point
"""

__version__ = "0.1.0"
