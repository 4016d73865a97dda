/**
 * Bootstrap: pick the server base URL and session, mount the gallery.
 *
 * The base URL comes from ?server=, falling back to the page origin (the
 * service can also serve this app directly); the session from ?session=,
 * falling back to the first one the server lists.
 */

import { CurationApi } from './api.js';
import { GalleryStore } from './store.js';
import { GalleryView } from './ui.js';

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const base = params.get('server') ?? window.location.origin;
  const api = new CurationApi(base);

  let sessionId = params.get('session');
  if (!sessionId) {
    const sessions = await api.listSessions();
    if (sessions.length === 0) {
      document.body.textContent =
        'no curation sessions on the server — create one with the CLI first';
      return;
    }
    sessionId = sessions[0].id;
  }

  const root = document.getElementById('gallery');
  if (!root) throw new Error('missing #gallery element');
  const store = new GalleryStore(api, sessionId);
  new GalleryView(root, store, api);
  await store.load();
  root.focus();
}

void boot();
