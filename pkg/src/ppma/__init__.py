"""Complex Monge-Ampere equations for positive (p,p)-forms on flat tori."""
