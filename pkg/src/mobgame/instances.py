"""Small hand-built networks with known equilibria, used as oracle instances."""

from __future__ import annotations

from .demand import BUSINESS, COMMUTING, LEISURE, Demand, Request, UserClass
from .network import EdgeLabel, Mode, MultimodalGraph, Service, Transfer, Vertex

FREE = EdgeLabel()


def _walk_taxi_pair(taxi_routes: list[EdgeLabel], walk_time: float = 1.0,
                    access_price: float = 0.0) -> MultimodalGraph:
    """Origin 0 and destination 1 joined by a walk edge and parallel taxi routes.

    Vertices: 0, 1 walk; 2, 3 taxi. Edge 0 is the walk route o->d, edge 1 the
    walk return d->o, edge 2 boards the taxi layer at o, edge 3 alights at d,
    and edges 4.. are the taxi routes 2->3.
    """
    vertices = [Vertex(0, Mode.WALK, 0.0, 0.0), Vertex(1, Mode.WALK, 1.0, 0.0),
                Vertex(2, Mode.TAXI, 0.0, 0.0), Vertex(3, Mode.TAXI, 1.0, 0.0)]
    walk = EdgeLabel(distance=1.0, freeflow_time=walk_time)
    tails = [0, 1, 0, 3]
    heads = [1, 0, 2, 1]
    kinds = [Service(Mode.WALK), Service(Mode.WALK), Transfer(Mode.WALK, Mode.TAXI), Transfer(Mode.TAXI, Mode.WALK)]
    labels = [walk, walk, EdgeLabel(price=access_price), FREE]
    for lab in taxi_routes:
        tails.append(2)
        heads.append(3)
        kinds.append(Service(Mode.TAXI))
        labels.append(lab)
    return MultimodalGraph(vertices, tails, heads, kinds, labels)


def pigou_graph() -> MultimodalGraph:
    """Constant 1 h walk route versus a taxi route with time ~ y/100 h.

    The taxi edge uses BPR with b=1: t = 0.001 + 0.999 y / 100, which equals
    1 h exactly at y = 100.
    """
    taxi = EdgeLabel(freeflow_time=0.001, capacity=100.0, bpr_a=999.0, bpr_b=1.0)
    return _walk_taxi_pair([taxi])


PIGOU_ROUTE_A = 0  # walk edge
PIGOU_ROUTE_B = 4  # taxi edge


def pigou_demand(volume: float = 150.0, user_class: UserClass = COMMUTING) -> Demand:
    return Demand([Request(user_class, 0, 1, volume)])


def multiclass_graph() -> MultimodalGraph:
    """Walk route plus two priced, congested taxi routes; classes split by value of time."""
    fast = EdgeLabel(price=6.0, distance=3.0, freeflow_time=0.2, capacity=60.0)
    slow = EdgeLabel(price=3.0, distance=3.0, freeflow_time=0.35, capacity=80.0)
    return _walk_taxi_pair([fast, slow], walk_time=0.9, access_price=2.0)


def multiclass_demand() -> Demand:
    return Demand([
        Request(COMMUTING, 0, 1, 60.0),
        Request(BUSINESS, 0, 1, 40.0),
        Request(LEISURE, 0, 1, 50.0),
    ])


def multimodal_corridor_graph() -> MultimodalGraph:
    """Three locations in a row with walk, taxi and PT layers and all transfers.

    Built by hand (rather than by the grid generator) to keep the number of
    simple paths small enough for enumeration: PT runs only between locations
    0 and 2 via 1, and the taxi layer is one-directional.
    """
    vertices = []
    for mode in (Mode.WALK, Mode.TAXI, Mode.PT):
        for i in range(3):
            vertices.append(Vertex(len(vertices), mode, float(i), 0.0))
    w, tx, pt = (0, 1, 2), (3, 4, 5), (6, 7, 8)
    tails, heads, kinds, labels = [], [], [], []

    def add(t, h, kind, lab):
        tails.append(t)
        heads.append(h)
        kinds.append(kind)
        labels.append(lab)

    for i in range(2):
        walk = EdgeLabel(distance=1.0, freeflow_time=0.5)
        add(w[i], w[i + 1], Service(Mode.WALK), walk)
        add(w[i + 1], w[i], Service(Mode.WALK), walk)
        add(tx[i], tx[i + 1], Service(Mode.TAXI),
            EdgeLabel(price=4.0, distance=1.0, freeflow_time=0.05, capacity=15.0))
        add(pt[i], pt[i + 1], Service(Mode.PT), EdgeLabel(price=1.0, distance=1.0, freeflow_time=0.15))
    # boarding at 0 and 1, alighting at 1 and 2
    for i in (0, 1):
        add(w[i], tx[i], Transfer(Mode.WALK, Mode.TAXI), EdgeLabel(price=3.0, fixed_time=0.05))
        add(w[i], pt[i], Transfer(Mode.WALK, Mode.PT), EdgeLabel(price=2.0, fixed_time=0.08))
    for i in (1, 2):
        add(tx[i], w[i], Transfer(Mode.TAXI, Mode.WALK), FREE)
        add(pt[i], w[i], Transfer(Mode.PT, Mode.WALK), FREE)
    add(pt[1], tx[1], Transfer(Mode.PT, Mode.TAXI), EdgeLabel(price=1.0, fixed_time=0.05))
    add(tx[1], pt[1], Transfer(Mode.TAXI, Mode.PT), EdgeLabel(price=1.0, fixed_time=0.08))
    return MultimodalGraph(vertices, tails, heads, kinds, labels)


def multimodal_corridor_demand() -> Demand:
    return Demand([
        Request(COMMUTING, 0, 2, 80.0),
        Request(BUSINESS, 0, 2, 30.0),
        Request(LEISURE, 1, 2, 40.0),
    ])


ORACLE_INSTANCES = {
    "pigou": (pigou_graph, pigou_demand),
    "multiclass": (multiclass_graph, multiclass_demand),
    "multimodal": (multimodal_corridor_graph, multimodal_corridor_demand),
}
