"""Global keyframe pose graph with odometry and structural-plane edges.

Vertices are keyframe poses; consecutive keyframes are tied by relative-pose
odometry edges, and keyframes that re-observe a registered structural plane
are tied to the plane's owner keyframe by a closest-point plane edge.  The
first vertex is the gauge and never moves.  Optimization runs only when a
new plane edge has appeared: odometry alone cannot reduce the chain's error,
so re-solving without fresh global information would be wasted work.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from srpslam import lm
from srpslam.errors import DisconnectedGraph, SolverDiverged
from srpslam.geometry import HessePlane, Pose
from srpslam.residuals import plane_edge_error, pose_edge_residual
from srpslam.srp import SrpMatch


@dataclass
class GraphParams:
    odom_sigma_t: float = 0.05
    odom_sigma_r: float = np.radians(0.5)
    plane_sigma: float = 0.05
    max_iterations: int = 50
    rel_cost_tol: float = 1e-8


@dataclass
class OdomEdge:
    i: int
    j: int
    meas: Pose
    sqrt_info: np.ndarray  # 6x6, whitens (e_t, e_theta)


@dataclass
class PlaneEdge:
    i: int
    m: int
    obs: HessePlane  # plane observed in keyframe i
    rec: HessePlane  # registry plane in keyframe m
    sqrt_info: np.ndarray  # 3x3


@dataclass
class PoseGraph:
    params: GraphParams = field(default_factory=GraphParams)
    ids: list[int] = field(default_factory=list)
    poses: dict[int, Pose] = field(default_factory=dict)
    odom_edges: list[OdomEdge] = field(default_factory=list)
    plane_edges: list[PlaneEdge] = field(default_factory=list)
    n_optimizations: int = 0

    # -- construction --------------------------------------------------

    def add_vertex(self, vid: int, pose: Pose) -> None:
        if vid in self.poses:
            raise ValueError(f"duplicate vertex id {vid}")
        self.ids.append(vid)
        self.poses[vid] = pose

    def add_odom_edge(self, i: int, j: int, meas: Pose,
                      path_length: float = 1.0) -> None:
        """Relative-pose edge; information scales inversely with the path
        length driven between the two keyframes."""
        p = self.params
        scale = 1.0 / np.sqrt(max(path_length, 1e-6))
        diag = np.concatenate([
            np.full(3, scale / p.odom_sigma_t),
            np.full(3, scale / p.odom_sigma_r),
        ])
        self.odom_edges.append(
            OdomEdge(i=i, j=j, meas=meas, sqrt_info=np.diag(diag))
        )

    def add_plane_edge(self, i: int, m: int, obs: HessePlane,
                       rec: HessePlane) -> None:
        if i not in self.poses or m not in self.poses:
            raise ValueError("plane edge references unknown vertex")
        sqrt_info = np.eye(3) / self.params.plane_sigma
        self.plane_edges.append(
            PlaneEdge(i=i, m=m, obs=obs, rec=rec, sqrt_info=sqrt_info)
        )

    def on_new_keyframe(
        self,
        vid: int,
        odom_meas: Pose | None,
        matches: list[SrpMatch],
        path_length: float = 1.0,
        init_pose: Pose | None = None,
    ) -> bool:
        """Append a keyframe and its edges; optimize iff plane edges appeared.

        ``odom_meas`` is the front-end's relative pose from the previous
        keyframe (None for the first, whose pose comes from ``init_pose``).
        ``matches`` carry the registry records (owner id + plane) directly,
        so no extra lookup table is needed.  Returns True when an
        optimization ran.
        """
        if odom_meas is None:
            self.add_vertex(
                vid, init_pose if init_pose is not None else Pose.identity()
            )
            return False
        prev = self.ids[-1]
        self.add_vertex(vid, self.poses[prev].compose(odom_meas))
        self.add_odom_edge(prev, vid, odom_meas, path_length)
        added = 0
        for match in matches:
            self.add_plane_edge(
                vid, match.record.owner_id, match.observed, match.record.plane
            )
            added += 1
        if added:
            self.optimize()
            return True
        return False

    # -- optimization --------------------------------------------------

    def _check_connected(self) -> None:
        if not self.ids:
            return
        adj: dict[int, set[int]] = {vid: set() for vid in self.ids}
        for e in self.odom_edges:
            adj[e.i].add(e.j)
            adj[e.j].add(e.i)
        for e in self.plane_edges:
            adj[e.i].add(e.m)
            adj[e.m].add(e.i)
        seen = {self.ids[0]}
        stack = [self.ids[0]]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        missing = [vid for vid in self.ids if vid not in seen]
        if missing:
            raise DisconnectedGraph(
                f"vertices {missing[:5]} unreachable from gauge vertex"
            )

    def optimize(self) -> float:
        """Levenberg-Marquardt over all vertices but the gauge; returns the
        final cost.  Accepted steps never increase cost (solver property)."""
        self._check_connected()
        if len(self.ids) < 2:
            self.n_optimizations += 1
            return 0.0
        free = self.ids[1:]
        index = {vid: k for k, vid in enumerate(free)}
        dim = 6 * len(free)

        x0 = {vid: self.poses[vid] for vid in self.ids}
        gauge = self.ids[0]

        def retract(x, dx):
            out = {gauge: x[gauge]}
            for vid, k in index.items():
                off = 6 * k
                out[vid] = x[vid].retract(dx[off : off + 3], dx[off + 3 : off + 6])
            return out

        def evaluate(x):
            h = np.zeros((dim, dim))
            g = np.zeros(dim)
            cost = 0.0

            def accumulate(blocks, r):
                nonlocal cost
                cost += float(r @ r)
                for off_a, ja in blocks:
                    g[off_a : off_a + 6] += ja.T @ r
                    for off_b, jb in blocks:
                        h[off_a : off_a + 6, off_b : off_b + 6] += ja.T @ jb

            for e in self.odom_edges:
                r, j_a, j_b = pose_edge_residual(x[e.i], x[e.j], e.meas)
                wr = e.sqrt_info @ r
                blocks = []
                if e.i != gauge:
                    blocks.append((6 * index[e.i], e.sqrt_info @ j_a))
                if e.j != gauge:
                    blocks.append((6 * index[e.j], e.sqrt_info @ j_b))
                accumulate(blocks, wr)
            for e in self.plane_edges:
                r, j_i, j_m = plane_edge_error(x[e.i], x[e.m], e.obs, e.rec)
                wr = e.sqrt_info @ r
                blocks = []
                if e.i != gauge:
                    blocks.append((6 * index[e.i], e.sqrt_info @ j_i))
                if e.m != gauge:
                    blocks.append((6 * index[e.m], e.sqrt_info @ j_m))
                accumulate(blocks, wr)
            return cost, h, g

        options = lm.LMOptions(
            max_iterations=self.params.max_iterations,
            rel_cost_tol=self.params.rel_cost_tol,
            step_tol=1e-12,
        )
        result = lm.solve(x0, evaluate, retract, options)
        for vid in free:
            pose = result.x[vid]
            if not np.all(np.isfinite(pose.t)):
                raise SolverDiverged("graph pose became non-finite")
            self.poses[vid] = pose
        self.n_optimizations += 1
        return result.cost

    # -- serialization -------------------------------------------------

    def dump(self) -> str:
        """Text snapshot: VERTEX / EDGE_ODOM / EDGE_PLANE lines."""
        lines = []
        for vid in self.ids:
            p = self.poses[vid]
            lines.append(
                "VERTEX %d %.9f %.9f %.9f %.9f %.9f %.9f %.9f"
                % (vid, *p.t, *p.q)
            )
        for e in self.odom_edges:
            lines.append(
                "EDGE_ODOM %d %d %.9f %.9f %.9f %.9f %.9f %.9f %.9f"
                % (e.i, e.j, *e.meas.t, *e.meas.q)
            )
        for e in self.plane_edges:
            lines.append(
                "EDGE_PLANE %d %d %.9f %.9f %.9f %.9f %.9f %.9f %.9f %.9f"
                % (
                    e.i, e.m,
                    *e.obs.normal, e.obs.distance,
                    *e.rec.normal, e.rec.distance,
                )
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, text: str, params: GraphParams | None = None) -> "PoseGraph":
        graph = cls(params=params if params is not None else GraphParams())
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                if parts[0] == "VERTEX":
                    vid = int(parts[1])
                    vals = np.array([float(v) for v in parts[2:9]])
                    graph.add_vertex(vid, Pose(q=vals[3:7], t=vals[0:3]))
                elif parts[0] == "EDGE_ODOM":
                    i, j = int(parts[1]), int(parts[2])
                    vals = np.array([float(v) for v in parts[3:10]])
                    graph.add_odom_edge(i, j, Pose(q=vals[3:7], t=vals[0:3]))
                elif parts[0] == "EDGE_PLANE":
                    i, m = int(parts[1]), int(parts[2])
                    vals = [float(v) for v in parts[3:11]]
                    graph.add_plane_edge(
                        i, m,
                        HessePlane.make(np.array(vals[0:3]), vals[3]),
                        HessePlane.make(np.array(vals[4:7]), vals[7]),
                    )
                else:
                    raise ValueError(f"unknown record '{parts[0]}'")
            except (IndexError, ValueError) as exc:
                raise ValueError(f"graph dump line {lineno}: {exc}") from exc
        return graph


__all__ = ["GraphParams", "OdomEdge", "PlaneEdge", "PoseGraph"]
