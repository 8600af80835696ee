import numpy as np

from wsnloc.deployment import Network, deploy
from wsnloc.geometry import build_scenario
from wsnloc.partitioning import PartitionMap, order_pairs, partition, relabel_dense
from wsnloc.pathgraph import hop_matrix, hops_from_edges, occurrence_counts
from wsnloc.segmentation import SegPair, form_pairs, kmeans_two

OPEN = build_scenario("none")


def line_network(n):
    pts = [(2 + 1.5 * k, 50) for k in range(n)]
    return Network.build(OPEN, pts, [False] * n, 2.0)


def grid_network(w, h):
    pts = [(5 + 6 * i, 5 + 6 * j) for j in range(h) for i in range(w)]
    return Network.build(OPEN, pts, [False] * len(pts), 6.5)


def test_no_pairs_single_area():
    net = grid_network(5, 5)
    pm = partition(net, [])
    assert pm.z == 1 and pm.w == 0
    assert (pm.label == 1).all()


def test_path_split_in_half():
    net = line_network(30)
    pm = partition(net, [SegPair(14, 15)])
    assert pm.label[:15].tolist() == [1] * 15
    assert pm.label[15:].tolist() == [2] * 15
    assert pm.z == 2 and pm.w == 1


def test_segmentation_nodes_on_opposite_sides():
    net = grid_network(8, 6)
    pm = partition(net, [SegPair(19, 20)])
    assert pm.label[19] != pm.label[20]


def test_bisector_ties_go_to_a_side():
    # odd path 0..30 split by (14, 16): node 15 is equidistant with one
    # neighbour per side, so it stays with a
    pts = [(2 + 3 * k, 50) for k in range(31)]
    net = Network.build(OPEN, pts, [False] * 31, 3.5)
    pm = partition(net, [SegPair(14, 16)])
    (rec,) = pm.history
    assert rec.bisector == (15,)
    assert pm.label[15] == pm.label[14]


class GraphNet:
    """Just the graph parts of a Network."""

    def __init__(self, n, edges):
        self.n = n
        self.edges = np.array(sorted((min(e), max(e)) for e in edges))
        nb = [[] for _ in range(n)]
        for i, j in edges:
            nb[i].append(j)
            nb[j].append(i)
        self.neighbors = tuple(tuple(sorted(x)) for x in nb)


def test_bisector_follows_neighbour_majority():
    # m (=1) is one hop from both a (=0) and b (=2); nodes 3 and 4 sit on b's
    # side and also touch m, so m has more neighbours there
    net = GraphNet(5, [(0, 1), (1, 2), (2, 3), (2, 4), (1, 3), (1, 4)])
    pm = partition(net, [SegPair(0, 2)], min_side=1)
    assert pm.history[0].bisector == (1,)
    assert pm.label.tolist() == [1, 2, 2, 2, 2]


def test_bisector_grid_ties_stay_with_a():
    net = grid_network(9, 5)
    a, b = 2 * 9 + 3, 2 * 9 + 5  # middle row, columns 3 and 5
    pm = partition(net, [SegPair(a, b)], min_side=1)
    rec = pm.history[0]
    assert rec.status == "split"
    assert 2 * 9 + 4 in rec.bisector
    for v in rec.bisector:
        assert pm.label[v] == pm.label[a]


def test_second_bisector_node_by_majority():
    # 1 and 5 are equidistant from a (=0) and b (=2); 1 ties and stays with a,
    # 5 sees 3 on a's side but 4 and 6 on b's side
    net = GraphNet(7, [(0, 1), (1, 2), (0, 3), (3, 5), (2, 4), (4, 5), (5, 6), (6, 4)])
    pm = partition(net, [SegPair(0, 2)], min_side=1)
    assert pm.history[0].bisector == (1, 5)
    assert pm.label.tolist() == [1, 1, 2, 1, 2, 2, 2]


def test_small_side_skipped():
    net = line_network(30)
    pm = partition(net, [SegPair(2, 3)])
    assert pm.z == 1
    assert pm.skipped("small-side") == 1
    pm = partition(net, [SegPair(2, 3)], min_side=3)
    assert pm.z == 2


def test_separated_pair_skipped():
    net = line_network(40)
    pm = partition(net, [SegPair(19, 20), SegPair(19, 21)], min_side=5)
    assert pm.z == 2
    assert [h.status for h in pm.history] == ["split", "separated"]


def test_later_split_uses_induced_subgraph():
    net = line_network(60)
    pm = partition(net, [SegPair(29, 30), SegPair(14, 15), SegPair(44, 45)])
    assert pm.z == 4
    assert [len(v) for v in pm.areas().values()] == [15, 15, 15, 15]


def test_labels_partition_nodes_and_connectivity_is_checked(caplog):
    sc = build_scenario("h_shape")
    broken = 0
    for seed in range(5):
        net = deploy(sc, 250, 20, 15, seed)
        ts = occurrence_counts(hop_matrix(net))
        pairs = form_pairs(kmeans_two(ts).high_members, net)
        pm = partition(net, pairs, ts)
        assert len(pm.label) == net.n
        assert pm.z == len(pm.areas())
        assert pm.z == pm.w + 1
        split = set(pm.disconnected(net))
        for s, members in pm.areas().items():
            H = hops_from_edges(net.n, net.edges, members, allow_disconnected=True)
            assert len(members) > 0
            assert ((H >= 0).all()) == (s not in split)
        broken += bool(split)
    # a wide bisector can strand a pocket of nodes; that must be reported
    assert caplog.text.count("are not connected") == broken


def test_order_pairs_strongest_first():
    ts = np.array([5, 9, 9, 1, 7, 7])
    pairs = [SegPair(0, 3), SegPair(4, 5), SegPair(1, 2)]
    assert order_pairs(pairs, ts) == [SegPair(1, 2), SegPair(4, 5), SegPair(0, 3)]
    # equal sums fall back to smallest id
    assert order_pairs([SegPair(4, 5), SegPair(1, 5)], [0, 5, 0, 0, 5, 2]) == [SegPair(1, 5), SegPair(4, 5)]


def test_relabeling_invariance():
    net = grid_network(10, 6)
    pairs = [SegPair(24, 25), SegPair(13, 23)]
    pm = partition(net, pairs, min_side=4)
    rng = np.random.default_rng(0)
    perm = rng.permutation(net.n)  # old id -> new id
    pos = np.empty_like(net.positions)
    pos[perm] = net.positions
    moved = Network.build(OPEN, pos, [False] * net.n, net.L)
    mapped = [SegPair(int(perm[p.a]), int(perm[p.b])) for p in pairs]
    pm2 = partition(moved, mapped, min_side=4)
    # same grouping of physical nodes, labels may differ
    groups = {frozenset(v.tolist()) for v in pm.areas().values()}
    groups2 = {frozenset(np.argsort(perm)[v].tolist()) for v in pm2.areas().values()}
    assert groups == groups2


def test_partition_csv(tmp_path):
    pm = PartitionMap(np.array([1, 1, 2]))
    pm.to_csv(tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines() == ["node_id,area_label", "0,1", "1,1", "2,2"]


def test_relabel_dense():
    assert relabel_dense(np.array([5, 5, 2, 9, 2])).tolist() == [1, 1, 2, 3, 2]
