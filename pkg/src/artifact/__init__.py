"""Einstein AH structures on compact surfaces."""
