"""Publish/subscribe-mediated SDN simulator for IoT networks."""

__version__ = "0.1.0"
