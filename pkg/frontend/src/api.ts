import type {
  MeshRegion,
  OptimizeResult,
  Pair,
  SessionDoc,
  SnapResult,
  Vec3,
  ViewWindow,
  ViewpointSummary,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export class StaleRevisionError extends ApiError {}

async function parseError(resp: Response): Promise<never> {
  let detail = resp.statusText;
  try {
    const body = (await resp.json()) as { detail?: string };
    if (body.detail) detail = body.detail;
  } catch {
    /* non-JSON error body */
  }
  if (resp.status === 409) throw new StaleRevisionError(resp.status, detail);
  throw new ApiError(resp.status, detail);
}

function viewQuery(view: ViewWindow): string {
  const q = new URLSearchParams({
    yaw: String(view.yaw),
    pitch: String(view.pitch),
    fov: String(view.fov),
    w: String(view.w),
    h: String(view.h),
  });
  return q.toString();
}

/**
 * Thin typed client for the annotation service. All geometry, poses, and
 * residuals are computed server-side; this class only moves JSON and PNG
 * bytes.
 */
export class AnnotationApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`);
    if (!resp.ok) await parseError(resp);
    return (await resp.json()) as T;
  }

  private async send<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, {
      method,
      headers: body === undefined ? undefined : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) await parseError(resp);
    return (await resp.json()) as T;
  }

  async viewpoints(): Promise<ViewpointSummary[]> {
    const body = await this.getJson<{ viewpoints: ViewpointSummary[] }>("/viewpoints");
    return body.viewpoints;
  }

  session(panoId: string): Promise<SessionDoc> {
    return this.getJson<SessionDoc>(`/session/${panoId}`);
  }

  cropUrl(panoId: string, view: ViewWindow): string {
    return `${this.baseUrl}/pano/${panoId}/crop?${viewQuery(view)}`;
  }

  overlayUrl(panoId: string, view: ViewWindow): string {
    return `${this.baseUrl}/session/${panoId}/overlay?${viewQuery(view)}`;
  }

  async fetchPng(url: string): Promise<Uint8Array> {
    const resp = await this.fetchFn(url);
    if (!resp.ok) await parseError(resp);
    return new Uint8Array(await resp.arrayBuffer());
  }

  meshRegion(xmin: number, xmax: number, ymin: number, ymax: number): Promise<MeshRegion> {
    return this.getJson<MeshRegion>(
      `/mesh/region?xmin=${xmin}&xmax=${xmax}&ymin=${ymin}&ymax=${ymax}`,
    );
  }

  snapRay(panoId: string, ray: Vec3, maxSnapDeg = 0.5): Promise<SnapResult> {
    return this.send<SnapResult>("POST", `/session/${panoId}/snap`, {
      ray,
      max_snap_deg: maxSnapDeg,
    });
  }

  addPairFromView(
    panoId: string,
    view: ViewWindow,
    u: number,
    v: number,
    world: Vec3,
    expectedRevision?: number,
  ): Promise<{ revision: number; index: number }> {
    return this.send("POST", `/session/${panoId}/pairs`, {
      u,
      v,
      world,
      view,
      expected_revision: expectedRevision ?? null,
    });
  }

  addPairPano(
    panoId: string,
    pair: Pair,
    expectedRevision?: number,
  ): Promise<{ revision: number; index: number }> {
    return this.send("POST", `/session/${panoId}/pairs`, {
      ...pair,
      expected_revision: expectedRevision ?? null,
    });
  }

  deletePair(
    panoId: string,
    index: number,
    expectedRevision?: number,
  ): Promise<{ revision: number; n_pairs: number }> {
    const q = expectedRevision === undefined ? "" : `?expected_revision=${expectedRevision}`;
    return this.send("DELETE", `/session/${panoId}/pairs/${index}${q}`);
  }

  optimize(panoId: string, expectedRevision?: number): Promise<OptimizeResult> {
    return this.send("POST", `/session/${panoId}/optimize`, {
      expected_revision: expectedRevision ?? null,
    });
  }
}
