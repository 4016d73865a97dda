/**
 * Typed client for the curation service's /api/v1 contract.
 *
 * All state is server-authoritative; this client only shapes requests and
 * surfaces quota rejections as a dedicated error type so the gallery can
 * roll optimistic updates back.
 */

export interface SessionStatus {
  id: string;
  current_stage: number;
  quota: number;
  selected_count: number;
  candidates_total: number;
  reference_image_id: string;
  reference_caption: string;
  promoted_stages: number[];
}

export interface Candidate {
  id: string;
  path: string;
  seed: number;
  stage: number;
  selected: boolean;
  selected_at: string | null;
}

export interface CandidatePage {
  items: Candidate[];
  page: number;
  pages: number;
  total: number;
  page_size: number;
  stage: number;
}

export interface PromoteResult {
  stage: number;
  dataset_size: number;
  manifest: { stage: number; quota: number; images: string[]; captions: string[] };
}

export class QuotaRejection extends Error {
  constructor(message: string, public current: number, public quota: number) {
    super(message);
    this.name = 'QuotaRejection';
  }
}

export class ApiError extends Error {
  constructor(message: string, public status: number) {
    super(message);
    this.name = 'ApiError';
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class CurationApi {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {
    this.baseUrl = baseUrl.replace(/\/$/, '');
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchFn(`${this.baseUrl}/api/v1${path}`, init);
    } catch (err) {
      throw new ApiError(`service unreachable: ${String(err)}`, 0);
    }
    const body = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      const message = (body as { error?: string }).error ?? resp.statusText;
      const payload = body as { current?: number; quota?: number };
      if (resp.status === 409 && payload.current !== undefined && payload.quota !== undefined) {
        throw new QuotaRejection(message, payload.current, payload.quota);
      }
      throw new ApiError(message, resp.status);
    }
    return body as T;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.request<T>(path, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(payload),
    });
  }

  listSessions(): Promise<SessionStatus[]> {
    return this.request<SessionStatus[]>('/sessions');
  }

  status(sessionId: string): Promise<SessionStatus> {
    return this.request<SessionStatus>(`/sessions/${sessionId}/status`);
  }

  candidates(
    sessionId: string,
    opts: { stage?: number; page?: number; pageSize?: number } = {},
  ): Promise<CandidatePage> {
    const params = new URLSearchParams();
    if (opts.stage !== undefined) params.set('stage', String(opts.stage));
    params.set('page', String(opts.page ?? 0));
    params.set('page_size', String(opts.pageSize ?? 50));
    return this.request<CandidatePage>(`/sessions/${sessionId}/candidates?${params}`);
  }

  select(sessionId: string, ids: string[]): Promise<{ selected_count: number; quota: number }> {
    return this.post(`/sessions/${sessionId}/select`, { ids, actor: 'ui' });
  }

  deselect(sessionId: string, ids: string[]): Promise<{ selected_count: number; quota: number }> {
    return this.post(`/sessions/${sessionId}/deselect`, { ids, actor: 'ui' });
  }

  promote(sessionId: string): Promise<PromoteResult> {
    return this.post(`/sessions/${sessionId}/promote`, { ids: [], actor: 'ui' });
  }

  imageUrl(imageId: string): string {
    return `${this.baseUrl}/api/v1/images/${imageId}`;
  }
}
