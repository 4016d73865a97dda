/**
 * Gallery state: a thin cache over the server with optimistic toggles.
 *
 * A card's selection is either server-acknowledged or carries a pending
 * marker while its request is in flight; rejected toggles roll back and
 * surface the server's message.  The store never invents state — reloads
 * always refetch.
 */

import { Candidate, CandidatePage, CurationApi, QuotaRejection, SessionStatus } from './api.js';

export interface CardState extends Candidate {
  pending: boolean;
}

export interface GalleryState {
  status: SessionStatus | null;
  cards: CardState[];
  page: number;
  pages: number;
  total: number;
  notice: string | null;
  loading: boolean;
}

type Listener = (state: GalleryState) => void;

export class GalleryStore {
  private state: GalleryState = {
    status: null,
    cards: [],
    page: 0,
    pages: 1,
    total: 0,
    notice: null,
    loading: false,
  };
  private listeners: Listener[] = [];
  private inFlight = new Set<string>();

  constructor(
    private api: CurationApi,
    readonly sessionId: string,
    private pageSize = 50,
  ) {}

  getState(): GalleryState {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private emit(patch: Partial<GalleryState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) listener(this.state);
  }

  async load(page = this.state.page): Promise<void> {
    this.emit({ loading: true, notice: null });
    try {
      const status = await this.api.status(this.sessionId);
      const result: CandidatePage = await this.api.candidates(this.sessionId, {
        page,
        pageSize: this.pageSize,
      });
      this.emit({
        status,
        cards: result.items.map((c) => ({ ...c, pending: false })),
        page: result.page,
        pages: result.pages,
        total: result.total,
        loading: false,
      });
    } catch (err) {
      // retry banner case: keep whatever state we had, surface the error
      this.emit({ loading: false, notice: `service unreachable — retry (${String(err)})` });
    }
  }

  quotaMet(): boolean {
    const s = this.state.status;
    return s !== null && s.selected_count === s.quota;
  }

  /** Toggle one card; optimistic, debounced per id, rolled back on rejection. */
  async toggle(id: string): Promise<void> {
    if (this.inFlight.has(id)) return; // double-click: one logical toggle
    const card = this.state.cards.find((c) => c.id === id);
    if (!card) return;
    const target = !card.selected;
    if (
      target &&
      this.state.status &&
      this.state.status.selected_count >= this.state.status.quota
    ) {
      this.emit({
        notice: `quota ${this.state.status.quota} reached — deselect something first`,
      });
      return;
    }
    this.inFlight.add(id);
    this.patchCard(id, { selected: target, pending: true });
    try {
      const result = target
        ? await this.api.select(this.sessionId, [id])
        : await this.api.deselect(this.sessionId, [id]);
      this.patchCard(id, { selected: target, pending: false });
      if (this.state.status) {
        this.emit({
          status: { ...this.state.status, selected_count: result.selected_count },
        });
      }
    } catch (err) {
      this.patchCard(id, { selected: !target, pending: false }); // rollback
      if (err instanceof QuotaRejection) {
        this.emit({ notice: `server rejected: ${err.message} (${err.current}/${err.quota})` });
      } else {
        this.emit({ notice: `toggle failed — retry (${String(err)})` });
      }
    } finally {
      this.inFlight.delete(id);
    }
  }

  async promote(): Promise<{ stage: number; dataset_size: number } | null> {
    try {
      const result = await this.api.promote(this.sessionId);
      await this.load(0);
      this.emit({
        notice: `promoted: stage ${result.stage}, ${result.dataset_size} images`,
      });
      return result;
    } catch (err) {
      this.emit({ notice: err instanceof Error ? err.message : String(err) });
      return null;
    }
  }

  private patchCard(id: string, patch: Partial<CardState>): void {
    this.emit({
      cards: this.state.cards.map((c) => (c.id === id ? { ...c, ...patch } : c)),
    });
  }
}
