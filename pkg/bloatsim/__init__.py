"""Discrete-event simulator for MPTCP over a shared bottleneck queue (DropTail, CoDel, CoDel-LIFO, FQ)."""
