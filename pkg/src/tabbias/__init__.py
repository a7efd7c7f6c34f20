"""Artificial inductive bias for small-sample tabular VAEs."""
