"""Herman-Kluk semiclassical propagation for subquadratic Hamiltonians."""
