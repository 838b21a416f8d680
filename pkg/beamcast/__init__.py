"""
beamcast
Multimodal (camera + GPS/IMU) beam prediction for UAV air-to-ground links,
with a synthetic channel/scene simulator and a from-scratch numpy autodiff core
"""

__version__ = "0.1.0"
