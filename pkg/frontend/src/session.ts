import { AnnotationApi, StaleRevisionError } from "./api.js";
import type { OptimizeResult, Pair, Pose, SnapResult, Vec3, ViewWindow } from "./types.js";

export interface SessionSnapshot {
  panoId: string;
  revision: number;
  pose: Pose;
  pairs: Pair[];
  /** Residuals as returned by the last optimize; never recomputed locally. */
  residualsDeg: number[] | null;
  medianDeg: number | null;
  converged: boolean | null;
}

/**
 * Client-side session controller.
 *
 * Keeps a mirror of the server session document plus the last optimize
 * result. Every mutation carries the locally known revision; on a stale
 * rejection the controller refreshes and replays once. All displayed
 * numbers (pose, residuals, medians) are service responses verbatim.
 */
export class SessionController {
  private revision = 0;
  private pose: Pose | null = null;
  private pairs: Pair[] = [];
  private lastOptimize: OptimizeResult | null = null;

  constructor(
    private readonly api: AnnotationApi,
    readonly panoId: string,
  ) {}

  snapshot(): SessionSnapshot {
    if (!this.pose) throw new Error("session not loaded");
    return {
      panoId: this.panoId,
      revision: this.revision,
      pose: this.pose,
      pairs: [...this.pairs],
      residualsDeg: this.lastOptimize ? [...this.lastOptimize.residuals_deg] : null,
      medianDeg: this.lastOptimize ? this.lastOptimize.median_deg : null,
      converged: this.lastOptimize ? this.lastOptimize.converged : null,
    };
  }

  async refresh(): Promise<SessionSnapshot> {
    const doc = await this.api.session(this.panoId);
    this.revision = doc.revision;
    this.pose = doc.pose;
    this.pairs = doc.pairs;
    return this.snapshot();
  }

  private async withRetry<T>(op: () => Promise<T>): Promise<T> {
    try {
      return await op();
    } catch (err) {
      if (err instanceof StaleRevisionError) {
        await this.refresh();
        return await op();
      }
      throw err;
    }
  }

  /** Snap a model-pane click (already converted to a camera ray) to a vertex. */
  snap(ray: Vec3, maxSnapDeg = 0.5): Promise<SnapResult> {
    return this.api.snapRay(this.panoId, ray, maxSnapDeg);
  }

  /** Record a pair from a panorama-pane click inside the given crop. */
  async addPairFromClick(view: ViewWindow, u: number, v: number, world: Vec3): Promise<number> {
    const out = await this.withRetry(() =>
      this.api.addPairFromView(this.panoId, view, u, v, world, this.revision),
    );
    this.revision = out.revision;
    await this.refresh();
    return out.index;
  }

  async deletePair(index: number): Promise<void> {
    const out = await this.withRetry(() =>
      this.api.deletePair(this.panoId, index, this.revision),
    );
    this.revision = out.revision;
    await this.refresh();
  }

  async optimize(): Promise<OptimizeResult> {
    const out = await this.withRetry(() => this.api.optimize(this.panoId, this.revision));
    this.revision = out.revision;
    this.pose = out.pose;
    this.lastOptimize = out;
    return out;
  }
}
