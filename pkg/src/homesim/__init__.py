"""Desk-scale home automation stack, fully simulated.

Posts on a mock social feed are parsed into appliance commands, queued by a
control server, fetched by a hub over HTTP, and relayed over a simulated
lossy sub-GHz star network to slave nodes modeling household appliances.
"""

__version__ = "0.1.0"
