"""PPO actor-critic defender."""
