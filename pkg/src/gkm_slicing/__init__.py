"""Two-level network slicing: InP-to-MVNO auctions and intra-slice allocation."""

from .baselines import (
    EqualSharing,
    KellyMechanism,
    MechanismOutcome,
    SocialOptimum,
    efficiency_report,
    equal_share,
    kelly_auction,
    optimal_welfare,
)
from .gkm_auction import (
    AuctionTrace,
    GeneralizedKellyMechanism,
    GkmConfig,
    run_auction,
    verify_equilibrium,
)
from .lower_level import allocate_fractions, marginal_valuation, valuation
from .market import Market
from .multi_resource import (
    JointValuation,
    MultiResourceGKM,
    MultiResourceMarket,
    ResourceKind,
    run_multi_auction,
    solve_joint,
)

__version__ = "0.1.0"

__all__ = [
    "AuctionTrace",
    "EqualSharing",
    "GeneralizedKellyMechanism",
    "GkmConfig",
    "JointValuation",
    "KellyMechanism",
    "Market",
    "MechanismOutcome",
    "MultiResourceGKM",
    "MultiResourceMarket",
    "ResourceKind",
    "SocialOptimum",
    "allocate_fractions",
    "efficiency_report",
    "equal_share",
    "kelly_auction",
    "marginal_valuation",
    "optimal_welfare",
    "run_auction",
    "run_multi_auction",
    "solve_joint",
    "valuation",
    "__version__",
]
