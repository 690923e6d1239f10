"""Multi-AUV underwater target tracking with diffusion-supervised MARL.

Modules:

* kernels     - numba/numpy dual-path MLP and Adam kernels
* nets        - three-layer network engine with hand-chained gradients
* checkpoint  - binary parameter serialisation
* diffusion   - conditional denoising diffusion policy
* env         - sonar, hydrodynamics, collisions, rewards, integration
* scenario    - presets and strict JSON configuration
* replay      - source-tagged ring replay buffer
* quality     - movement-quality labels and demonstration harvesting
* trainer     - dual-decision training loop and baselines
* metrics     - episode metrics and trajectory logs
* harness     - suite runner, sweeps, CSV summaries
* cli         - command-line interface
"""

__version__ = "0.1.0"
