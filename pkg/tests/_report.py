"""Shared record of acceptance outcomes, printed at the end of a pytest session."""
RESULTS = {}
